#include "m2t/ablation.h"

#include <cmath>
#include <cstdio>

namespace m2t {

RunOutcome pretrain_and_probe(const TrainConfig& c, const MetricsSink& sink) {
    const auto [train, test] = load_dataset(c);
    const TrainResult r = run_training(c, train, sink);
    const Mlp encoder = encoder_from_checkpoint(r.checkpoint);
    const Dataset ftrain = extract_features(encoder, train);
    const Dataset ftest = extract_features(encoder, test);

    RunOutcome out;
    out.seed = c.seed;
    out.probe_acc = linear_probe(ftrain, ftest, c.probe, c.seed).test_acc;
    out.knn_acc = knn_eval(ftrain, ftest, std::min<std::size_t>(20, ftrain.rows));
    out.final_loss = r.metrics.empty() ? 0.0 : r.metrics.back().loss;
    out.iterations = r.iterations;
    out.sec_per_iter = r.mean_sec_per_iter;
    out.comm_bytes_per_iter = r.comm_bytes_per_iter;
    return out;
}

std::string AblationCell::label() const { return to_string(student) + "/" + to_string(teacher); }

std::vector<AblationCell> ablation_cells() {
    std::vector<AblationCell> cells;
    for (StudentNorm s : {StudentNorm::plain, StudentNorm::synced})
        for (TeacherNorm t : {TeacherNorm::plain, TeacherNorm::synced, TeacherNorm::momentum}) cells.push_back({s, t});
    return cells;
}

TrainConfig ablation_config(const TrainConfig& base, const AblationCell& cell, std::uint64_t seed) {
    TrainConfig c = base;
    if (c.mode == TrainMode::moco) c.mode = TrainMode::byol_m2t;
    c.student_bn = cell.student;
    c.teacher_bn = cell.teacher;
    c.seed = seed;
    return c;
}

std::vector<AblationRow> ablation_grid(const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                                       const AblationSinkFactory& sinks) {
    std::vector<AblationRow> rows;
    for (const AblationCell& cell : ablation_cells()) {
        AblationRow row{cell, {}, 0.0, 0.0, 0.0, 0};
        for (std::uint64_t seed : seeds) {
            row.runs.push_back(pretrain_and_probe(ablation_config(base, cell, seed), sinks ? sinks(cell, seed) : MetricsSink{}));
        }
        const double n = static_cast<double>(row.runs.size());
        for (const auto& r : row.runs) {
            row.mean_acc += r.probe_acc / n;
            row.sec_per_iter += r.sec_per_iter / n;
            row.comm_bytes_per_iter = r.comm_bytes_per_iter;
        }
        for (const auto& r : row.runs) row.std_acc += (r.probe_acc - row.mean_acc) * (r.probe_acc - row.mean_acc);
        row.std_acc = row.runs.size() > 1 ? std::sqrt(row.std_acc / (n - 1)) : 0.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::string s = "| student BN | teacher BN | probe acc | std | sec/iter | comm bytes/iter |\n"
                    "|---|---|---|---|---|---|\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "| %s | %s | %.4f | %.4f | %.6f | %llu |\n", to_string(r.cell.student).c_str(),
                      to_string(r.cell.teacher).c_str(), r.mean_acc, r.std_acc, r.sec_per_iter,
                      static_cast<unsigned long long>(r.comm_bytes_per_iter));
        s += buf;
    }
    return s;
}

}  // namespace m2t
