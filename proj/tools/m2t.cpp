#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "m2t/ablation.h"
#include "m2t/errors.h"
#include "m2t/eval.h"
#include "m2t/gradcheck_suites.h"
#include "m2t/run_io.h"

namespace {

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNonFinite = 3;
constexpr int kExitVersion = 4;
constexpr int kExitUsage = 64;

struct PretrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out = "run";
    std::string preset;
};

struct EvalArgs {
    std::string checkpoint;
    std::string config;
    std::vector<std::string> overrides;
    std::string images, labels;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
    std::string mode = "probe";
    std::size_t k = 20;
    int probe_epochs = -1;
    double probe_lr = -1.0;
};

struct GradcheckArgs {
    std::size_t trials = 100;
    std::uint64_t seed = 7;
    bool inject_faulty = false;
};

struct AblateArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::size_t seeds = 5;
    std::string out;
};

int cmd_pretrain(const PretrainArgs& a) {
    const m2t::TrainConfig c = m2t::load_config(a.config, a.overrides);
    if (a.preset.empty()) {
        const auto r = m2t::pretrain_to_dir(c, a.out);
        std::cout << "iterations " << r.iterations << ", final loss "
                  << (r.metrics.empty() ? 0.0 : r.metrics.back().loss) << ", wrote " << a.out << "\n";
        return 0;
    }
    if (a.preset != "table1-grid") throw m2t::ConfigError("--preset", "unknown preset '" + a.preset + "'");
    for (const auto& cell : m2t::ablation_cells()) {
        const std::filesystem::path dir = std::filesystem::path(a.out) /
                                          (m2t::to_string(cell.student) + "-" + m2t::to_string(cell.teacher));
        const auto r = m2t::pretrain_to_dir(m2t::ablation_config(c, cell, c.seed), dir);
        std::cout << cell.label() << ": iterations " << r.iterations << ", wrote " << dir.string() << "\n";
    }
    return 0;
}

int cmd_eval(const EvalArgs& a) {
    if (a.mode != "probe" && a.mode != "knn") {
        std::cerr << "error: --mode must be probe or knn\n";
        return kExitUsage;
    }
    const m2t::Checkpoint ck = m2t::load_checkpoint(a.checkpoint);

    m2t::Dataset train, test;
    m2t::ProbeSpec probe;
    std::uint64_t seed = a.seed;
    if (!a.config.empty()) {
        const m2t::TrainConfig c = m2t::load_config(a.config, a.overrides);
        std::tie(train, test) = m2t::load_dataset(c);
        probe = c.probe;
        seed = c.seed;
    } else if (!a.images.empty() && !a.labels.empty()) {
        const m2t::Dataset full = m2t::load_idx(a.images, a.labels);
        std::tie(train, test) = m2t::train_test_split(full, a.test_fraction, seed);
    } else {
        std::cerr << "error: eval needs --config or both --images and --labels\n";
        return kExitUsage;
    }
    if (a.probe_epochs >= 0) probe.epochs = a.probe_epochs;
    if (a.probe_lr > 0) probe.lr = a.probe_lr;
    if (a.mode == "knn" && (a.k == 0 || a.k > train.rows)) {
        std::cerr << "error: --k must be in [1, " << train.rows << "] (training rows), got " << a.k << "\n";
        return kExitUsage;
    }

    const m2t::Mlp encoder = m2t::encoder_from_checkpoint(ck);
    const m2t::Dataset ftrain = m2t::extract_features(encoder, train);
    const m2t::Dataset ftest = m2t::extract_features(encoder, test);

    nlohmann::json report{{"mode", a.mode},
                          {"checkpoint", a.checkpoint},
                          {"train_rows", train.rows},
                          {"test_rows", test.rows},
                          {"feature_dim", ftrain.dim}};
    if (a.mode == "probe") {
        const auto r = m2t::linear_probe(ftrain, ftest, probe, seed);
        report["accuracy"] = r.test_acc;
        report["train_accuracy"] = r.train_acc;
        report["probe_epochs"] = probe.epochs;
    } else {
        report["accuracy"] = m2t::knn_eval(ftrain, ftest, a.k);
        report["k"] = a.k;
    }
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(const GradcheckArgs& a) {
    m2t::SuiteOptions opt;
    opt.trials = a.trials;
    opt.seed = a.seed;
    opt.inject_faulty = a.inject_faulty;
    const auto results = m2t::run_gradcheck_suites(opt);
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-34s trials %4zu  worst rel err %.3e  %s\n", r.name.c_str(), r.trials, r.worst_rel_error,
                    r.passed() ? "ok" : "FAIL");
        ok = ok && r.passed();
    }
    if (!ok) {
        std::printf("\nfailing suites (tolerance %.0e):\n", opt.tolerance);
        for (const auto& r : results)
            if (!r.passed())
                std::printf("  %s: %zu/%zu trials, worst rel err %.3e, %zu NaN\n", r.name.c_str(), r.failed_trials,
                            r.trials, r.worst_rel_error, r.nan_count);
    }
    return ok ? 0 : kExitError;
}

int cmd_ablate(const AblateArgs& a) {
    const m2t::TrainConfig c = m2t::load_config(a.config, a.overrides);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < a.seeds; ++i) seeds.push_back(c.seed + i);

    std::vector<std::unique_ptr<std::ofstream>> files;
    m2t::AblationSinkFactory sinks;
    if (!a.out.empty()) {
        std::filesystem::create_directories(a.out);
        sinks = [&](const m2t::AblationCell& cell, std::uint64_t seed) -> m2t::MetricsSink {
            const auto p = std::filesystem::path(a.out) / (m2t::to_string(cell.student) + "-" +
                                                           m2t::to_string(cell.teacher) + "-seed" +
                                                           std::to_string(seed) + ".csv");
            files.push_back(std::make_unique<std::ofstream>(p));
            std::ofstream* f = files.back().get();
            *f << m2t::kMetricsHeader << "\n";
            return [f](const m2t::MetricsRecord& r) { *f << m2t::metrics_csv_row(r) << "\n"; };
        };
    }
    const auto rows = m2t::ablation_grid(c, seeds, sinks);
    const std::string table = m2t::format_ablation_table(rows);
    std::cout << table;
    if (!a.out.empty()) {
        std::ofstream(std::filesystem::path(a.out) / "table.md") << table;
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows) {
            std::vector<double> acc;
            for (const auto& run : r.runs) acc.push_back(run.probe_acc);
            j.push_back({{"student_bn", m2t::to_string(r.cell.student)},
                         {"teacher_bn", m2t::to_string(r.cell.teacher)},
                         {"seeds", seeds},
                         {"probe_acc", acc},
                         {"mean_acc", r.mean_acc},
                         {"std_acc", r.std_acc},
                         {"sec_per_iter", r.sec_per_iter},
                         {"comm_bytes_per_iter", r.comm_bytes_per_iter}});
        }
        std::ofstream(std::filesystem::path(a.out) / "table.json") << j.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"m2t: student/teacher self-supervised pretraining with momentum batch normalization"};
    app.require_subcommand(1);

    PretrainArgs pa;
    auto* pretrain = app.add_subcommand("pretrain", "train a student/teacher pair and dump the teacher encoder");
    pretrain->add_option("--config", pa.config, "JSON config file")->required()->check(CLI::ExistingFile);
    pretrain->add_option("--set", pa.overrides, "override a config field, key=value (repeatable)");
    pretrain->add_option("--out", pa.out, "output directory")->capture_default_str();
    pretrain->add_option("--preset", pa.preset, "table1-grid: one run per student/teacher BN combination");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "linear probe or kNN on frozen teacher features");
    eval->add_option("--checkpoint", ea.checkpoint, "checkpoint.bin")->required()->check(CLI::ExistingFile);
    eval->add_option("--config", ea.config, "config whose dataset to evaluate on")->check(CLI::ExistingFile);
    eval->add_option("--set", ea.overrides, "config override, key=value (repeatable)");
    eval->add_option("--images", ea.images, "IDX image file")->check(CLI::ExistingFile);
    eval->add_option("--labels", ea.labels, "IDX label file")->check(CLI::ExistingFile);
    eval->add_option("--test-fraction", ea.test_fraction, "held-out fraction for IDX data")->capture_default_str();
    eval->add_option("--seed", ea.seed, "split / probe seed for IDX data")->capture_default_str();
    eval->add_option("--mode", ea.mode, "probe or knn")->capture_default_str();
    eval->add_option("--k", ea.k, "neighbours for knn")->capture_default_str();
    eval->add_option("--probe-epochs", ea.probe_epochs, "override probe epochs");
    eval->add_option("--probe-lr", ea.probe_lr, "override probe learning rate");

    GradcheckArgs ga;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every differentiable op");
    gradcheck->add_option("--trials", ga.trials, "random trials per suite")->capture_default_str();
    gradcheck->add_option("--seed", ga.seed, "seed")->capture_default_str();
    gradcheck->add_flag("--inject-faulty", ga.inject_faulty)->group("");

    AblateArgs aa;
    auto* ablate = app.add_subcommand("ablate", "student x teacher BN grid, probe accuracy per row");
    ablate->add_option("--config", aa.config, "JSON config file")->required()->check(CLI::ExistingFile);
    ablate->add_option("--set", aa.overrides, "config override, key=value (repeatable)");
    ablate->add_option("--seeds", aa.seeds, "number of seeds, starting at the config seed")->capture_default_str();
    ablate->add_option("--out", aa.out, "directory for per-run metrics and the table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*pretrain) return cmd_pretrain(pa);
        if (*eval) return cmd_eval(ea);
        if (*gradcheck) return cmd_gradcheck(ga);
        if (*ablate) return cmd_ablate(aa);
    } catch (const m2t::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const m2t::NonFiniteLossError& e) {
        std::cerr << "aborted: " << e.what() << "\n";
        return kExitNonFinite;
    } catch (const m2t::VersionError& e) {
        std::cerr << "checkpoint version: " << e.what() << "\n";
        return kExitVersion;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
