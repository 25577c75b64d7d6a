#pragma once

// Batch-normalization variants over the batch axis of [m x C] activations:
// per-worker ("plain"), simulated synchronized, simulated shuffling, and
// momentum BN whose statistics blend the current batch with a history that
// is committed lazily once per symmetrized iteration.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m2t/tensor.h"

namespace m2t {

struct BatchStats {
    std::vector<double> mean;
    std::vector<double> var;  // biased, 1/m
    std::size_t count = 0;

    std::size_t channels() const { return mean.size(); }
};

/// Per-channel affine parameters. gamma/beta are [1 x C] tensors so they can
/// be trained (student) or EMA-updated (teacher).
struct NormParams {
    Tensor gamma;
    Tensor beta;
    double eps = 1e-5;

    static NormParams identity(std::size_t channels, bool requires_grad = false, double eps = 1e-5);
    std::size_t channels() const { return gamma.numel(); }
};

/// Which side of the momentum blend alpha weights.
///   weight_on_batch:   use = alpha * batch + (1 - alpha) * history
///   weight_on_history: use = (1 - alpha) * batch + alpha * history
enum class AlphaSemantics { weight_on_batch, weight_on_history };

std::string to_string(AlphaSemantics s);
AlphaSemantics alpha_semantics_from_string(const std::string& s);

struct MomentumBNState {
    std::vector<double> hist_mean;
    std::vector<double> hist_var;
    bool initialized = false;
    AlphaSemantics semantics = AlphaSemantics::weight_on_batch;
    /// Per-view statistics staged by teacher forwards, consumed by the commit.
    std::vector<BatchStats> pending;
    std::uint64_t commits = 0;

    static MomentumBNState fresh(std::size_t channels, AlphaSemantics semantics);
    std::size_t channels() const { return hist_mean.size(); }
};

/// Contiguous equal partition of a batch of N samples over W simulated workers.
class WorkerLayout {
public:
    WorkerLayout(std::size_t batch_size, std::size_t num_workers);

    std::size_t batch_size() const { return batch_size_; }
    std::size_t num_workers() const { return num_workers_; }
    std::size_t per_worker() const { return batch_size_ / num_workers_; }
    std::pair<std::size_t, std::size_t> range(std::size_t worker) const;

private:
    std::size_t batch_size_;
    std::size_t num_workers_;
};

/// Mean and biased variance per channel. Throws on an empty batch.
BatchStats batch_stats(const Tensor& x);

/// Equal-weight average of per-view / per-worker statistics.
BatchStats average_stats(std::span<const BatchStats> parts);

/// y = gamma * (x - mu) / sqrt(var + eps) + beta with fixed (gradient-constant) statistics.
Tensor bn_apply(const Tensor& x, const BatchStats& stats, const NormParams& p);

/// Same transform with statistics computed from `x` on the tape, so the
/// backward pass flows through mean and variance.
Tensor bn_batch(const Tensor& x, const NormParams& p);

/// Each worker slice normalized by its own slice statistics.
Tensor plain_bn_forward(const Tensor& x, const WorkerLayout& layout, const NormParams& p);

/// Statistics over the union of all workers. The simulated all-gather
/// concatenates worker slices in worker order, so the reduction order equals
/// that of a single worker holding the whole batch.
Tensor synced_bn_forward(const Tensor& x, const WorkerLayout& layout, const NormParams& p);

/// Seeded uniform permutation used by shuffling BN; row i of the shuffled
/// batch is sample perm[i].
std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed);

/// Permute samples across workers, apply per-worker BN, restore the original order.
Tensor shuffling_bn_forward(const Tensor& x, const WorkerLayout& layout, const NormParams& p,
                            std::uint64_t perm_seed);

/// Bytes a real synchronized BN would all-reduce per forward (sum and sum of
/// squares per channel, doubles, across W workers in a ring).
std::uint64_t synced_bn_comm_bytes(std::size_t channels, std::size_t num_workers);

/// Weight the blend puts on current-batch statistics for this alpha.
double batch_weight(AlphaSemantics s, double alpha);

/// Blend of batch statistics with the stored history under the state's
/// semantics. Falls back to pure batch statistics while the history is uninitialized.
BatchStats blend_with_history(const BatchStats& batch, const MomentumBNState& state, double alpha);

struct MomentumBNOutput {
    Tensor output;
    BatchStats batch;  // current-view statistics, to be staged for the lazy commit
    BatchStats used;   // blended statistics that normalized the output
};

/// Normalizes `x` with history-blended statistics. Does not modify `state`.
/// The output never participates in gradient tracking through the statistics.
MomentumBNOutput momentum_bn_forward(const Tensor& x, const MomentumBNState& state, double alpha,
                                     const NormParams& p);

/// hist <- blend(avg(s_v, s_v2), hist). Seeds the history with the average
/// when uninitialized. Returns the L2 norm of the history change.
double momentum_bn_lazy_commit(MomentumBNState& state, const BatchStats& s_v, const BatchStats& s_v2,
                               double alpha);

/// Commits whatever the teacher forwards staged this iteration (two views in
/// symmetrized mode, one in single-view mode) and clears it.
double commit_pending(MomentumBNState& state, double alpha);

}  // namespace m2t
