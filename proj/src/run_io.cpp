#include "m2t/run_io.h"

#include <chrono>
#include <ctime>
#include <fstream>

#include <json.hpp>

#include "m2t/errors.h"

#ifndef M2T_VERSION
#define M2T_VERSION "unknown"
#endif

namespace m2t {

const char* code_version() { return M2T_VERSION; }

RunPaths run_paths(const std::filesystem::path& dir) {
    return {dir, dir / "manifest.json", dir / "metrics.csv", dir / "checkpoint.bin", dir / "completion.json"};
}

std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

namespace {

void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    out << j.dump(2) << "\n";
}

}  // namespace

TrainResult pretrain_to_dir(const TrainConfig& c, const std::filesystem::path& dir) {
    c.validate();
    std::filesystem::create_directories(dir);
    const RunPaths paths = run_paths(dir);
    const auto [train, test] = load_dataset(c);

    write_json(paths.manifest, {{"config", config_to_json(c)},
                                {"seed", c.seed},
                                {"code_version", code_version()},
                                {"start_time", utc_timestamp()},
                                {"outputs",
                                 {{"metrics", paths.metrics.filename().string()},
                                  {"checkpoint", paths.checkpoint.filename().string()},
                                  {"completion", paths.completion.filename().string()}}}});

    std::ofstream csv(paths.metrics);
    if (!csv) throw Error("cannot write " + paths.metrics.string());
    csv << kMetricsHeader << "\n";
    csv.flush();
    auto sink = [&csv](const MetricsRecord& r) {
        csv << metrics_csv_row(r) << "\n";
        csv.flush();
    };

    try {
        TrainResult r = run_training(c, train, sink);
        save_checkpoint(paths.checkpoint, r.checkpoint);
        write_json(paths.completion, {{"status", "ok"},
                                      {"end_time", utc_timestamp()},
                                      {"iterations", r.iterations},
                                      {"train_rows", train.rows},
                                      {"test_rows", test.rows}});
        return r;
    } catch (const NonFiniteLossError& e) {
        write_json(paths.completion, {{"status", "nonfinite_loss"},
                                      {"end_time", utc_timestamp()},
                                      {"iteration", e.iteration()},
                                      {"message", e.what()}});
        throw;
    }
}

}  // namespace m2t
