#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "m2t/config.h"
#include "m2t/eval.h"
#include "m2t/trainer.h"

namespace m2t {

/// Pretrain with `c`, then linear-probe the dumped teacher encoder on the
/// held-out split of the same dataset.
struct RunOutcome {
    std::uint64_t seed = 0;
    double probe_acc = 0.0;
    double knn_acc = 0.0;
    double final_loss = 0.0;
    std::int64_t iterations = 0;
    double sec_per_iter = 0.0;
    std::uint64_t comm_bytes_per_iter = 0;
};
RunOutcome pretrain_and_probe(const TrainConfig& c, const MetricsSink& sink = {});

struct AblationCell {
    StudentNorm student;
    TeacherNorm teacher;
    std::string label() const;  // e.g. "plain/momentum"
};

/// {plain, synced} x {plain, synced, momentum}, student-major.
std::vector<AblationCell> ablation_cells();

/// `base` with the cell's BN placement; everything else untouched.
TrainConfig ablation_config(const TrainConfig& base, const AblationCell& cell, std::uint64_t seed);

struct AblationRow {
    AblationCell cell;
    std::vector<RunOutcome> runs;  // one per seed, in seed order
    double mean_acc = 0.0;
    double std_acc = 0.0;
    double sec_per_iter = 0.0;
    std::uint64_t comm_bytes_per_iter = 0;
};

/// Sink factory for per-(cell, seed) metrics; may return an empty sink.
using AblationSinkFactory = std::function<MetricsSink(const AblationCell&, std::uint64_t seed)>;

/// Every row trains on the same seeds, hence the same data, initialization
/// and batch order.
std::vector<AblationRow> ablation_grid(const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                                       const AblationSinkFactory& sinks = {});

/// Markdown table: student BN, teacher BN, mean acc, std, sec/iter, comm bytes.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace m2t
