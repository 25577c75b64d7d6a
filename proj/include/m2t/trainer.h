#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "m2t/checkpoint.h"
#include "m2t/config.h"
#include "m2t/objectives.h"
#include "m2t/optim.h"
#include "m2t/schedules.h"

namespace m2t {

struct MetricsRecord {
    std::int64_t iteration = 0;
    std::int64_t epoch = 0;
    double loss = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
    double lr = 0.0;
    double m = 0.0;
    double alpha = 0.0;
    std::vector<double> layer_drift;  // per teacher BN layer, history change at this commit
    double hist_drift = 0.0;          // L2 norm over all layers
    double sec_per_iter = 0.0;
};

inline constexpr const char* kMetricsHeader = "iter,epoch,loss,L1,L2,lr,m,alpha,hist_drift,sec_per_iter";
/// One CSV row (no trailing newline), doubles printed with 17 significant digits.
std::string metrics_csv_row(const MetricsRecord& r);

/// lr / m / alpha schedules over the run's iterations. Schedules are indexed
/// by iteration k = 0..T-1 with K = max(T - 1, 1), so the first iteration
/// uses the base values and the last one reaches zero.
struct Schedules {
    ScheduleSpec lr;
    ScheduleSpec m;
    ScheduleSpec alpha;
    std::int64_t iterations = 0;
    std::int64_t iterations_per_epoch = 0;
};

Schedules make_schedules(const TrainConfig& c, std::size_t train_rows);

struct StepValues {
    double lr;
    double m;
    double alpha;
};
StepValues step_values(const Schedules& s, std::int64_t k);

struct TrainState {
    TrainConfig config;
    StudentTeacherPair pair;
    OptimizerState optimizer;
    std::optional<NegQueue> queue;  // moco mode
    Rng augment_rng;
    Rng perm_rng;  // shuffling-BN permutations

    static TrainState init(const TrainConfig& c);
    WorkerLayout layout() const { return WorkerLayout(config.batch_size, config.workers); }
};

/// One iteration on already-augmented views:
///   symmetrized loss with lazy teacher BN -> backward -> optimizer step with
///   lr_at(k) -> lazy BN commit with alpha(k) -> EMA with m(k).
/// In moco mode only `v` reaches the student and `v2` the teacher; the key
/// batch is enqueued after the EMA. Throws NonFiniteLossError on a NaN/Inf loss.
MetricsRecord train_step_views(TrainState& state, const Tensor& v, const Tensor& v2, const Schedules& sched,
                               std::int64_t k, TeacherTrace* trace = nullptr);

/// Augments `batch` into two views with the state's augment stream, then train_step_views.
MetricsRecord train_step(TrainState& state, const Tensor& batch, const Schedules& sched, std::int64_t k,
                         const std::optional<std::pair<std::size_t, std::size_t>>& image_shape = std::nullopt);

/// Bytes that real synchronized or shuffling BN would exchange per iteration.
std::uint64_t comm_bytes_per_iteration(const TrainConfig& c);

struct TrainResult {
    StudentTeacherPair pair;
    std::vector<MetricsRecord> metrics;
    Checkpoint checkpoint;
    std::int64_t iterations = 0;
    double mean_sec_per_iter = 0.0;
    std::uint64_t comm_bytes_per_iter = 0;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

/// Full run: a seeded shuffle per epoch, floor(rows / batch) iterations per
/// epoch, one record every log_interval iterations (pushed to `sink` as soon
/// as it exists), teacher dumped at the end. A non-finite loss aborts with
/// NonFiniteLossError after the records so far have been delivered.
TrainResult run_training(const TrainConfig& c, const Dataset& train, const MetricsSink& sink = {});

}  // namespace m2t
