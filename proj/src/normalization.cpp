#include "m2t/normalization.h"

#include <cmath>

#include "m2t/errors.h"
#include "m2t/rng.h"

namespace m2t {

namespace {

Tensor row_tensor(const std::vector<double>& v) { return Tensor::from({1, v.size()}, v); }

void check_channels(const Tensor& x, std::size_t channels, const char* op) {
    if (x.rank() != 2 || x.cols() != channels) {
        throw DimensionError(std::string(op) + ": input " + shape_str(x.shape()) + " does not match " +
                             std::to_string(channels) + " channels");
    }
}

void check_params(const NormParams& p, const char* op) {
    if (p.gamma.numel() != p.beta.numel()) {
        throw DimensionError(std::string(op) + ": gamma " + shape_str(p.gamma.shape()) + " vs beta " +
                             shape_str(p.beta.shape()));
    }
    if (!(p.eps >= 0.0)) throw ValueError(std::string(op) + ": eps must be non-negative");
}

// Shared transform so every path performs identical floating-point steps.
Tensor normalize(const Tensor& x, const Tensor& mu, const Tensor& var, const NormParams& p) {
    const Tensor xhat = (x - mu) / sqrt(add_scalar(var, p.eps));
    return xhat * p.gamma + p.beta;
}

void check_alpha(double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ValueError("momentum BN alpha must be in [0, 1], got " + std::to_string(alpha));
    }
}

}  // namespace

NormParams NormParams::identity(std::size_t channels, bool requires_grad, double eps) {
    return NormParams{Tensor::full({1, channels}, 1.0, requires_grad), Tensor::zeros({1, channels}, requires_grad),
                      eps};
}

std::string to_string(AlphaSemantics s) {
    return s == AlphaSemantics::weight_on_batch ? "weight_on_batch" : "weight_on_history";
}

AlphaSemantics alpha_semantics_from_string(const std::string& s) {
    if (s == "weight_on_batch") return AlphaSemantics::weight_on_batch;
    if (s == "weight_on_history") return AlphaSemantics::weight_on_history;
    throw ValueError("unknown alpha semantics '" + s + "'");
}

MomentumBNState MomentumBNState::fresh(std::size_t channels, AlphaSemantics semantics) {
    MomentumBNState s;
    s.hist_mean.assign(channels, 0.0);
    s.hist_var.assign(channels, 1.0);
    s.semantics = semantics;
    return s;
}

WorkerLayout::WorkerLayout(std::size_t batch_size, std::size_t num_workers)
    : batch_size_(batch_size), num_workers_(num_workers) {
    if (num_workers == 0) throw ValueError("worker layout needs at least one worker");
    if (batch_size == 0) throw ValueError("worker layout: empty batch");
    if (batch_size % num_workers != 0) {
        throw ValueError("batch size " + std::to_string(batch_size) + " is not divisible by " +
                         std::to_string(num_workers) + " workers");
    }
}

std::pair<std::size_t, std::size_t> WorkerLayout::range(std::size_t worker) const {
    if (worker >= num_workers_) throw ValueError("worker index out of range");
    return {worker * per_worker(), (worker + 1) * per_worker()};
}

BatchStats batch_stats(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("batch_stats expects [m x C], got " + shape_str(x.shape()));
    if (x.rows() == 0) throw DimensionError("batch_stats: empty reduction");
    NoGradGuard guard;
    const Tensor mu = mean(x, 0);
    const Tensor v = var(x, 0);
    return BatchStats{{mu.values().begin(), mu.values().end()}, {v.values().begin(), v.values().end()}, x.rows()};
}

BatchStats average_stats(std::span<const BatchStats> parts) {
    if (parts.empty()) throw ValueError("average_stats: no statistics");
    const std::size_t c = parts[0].channels();
    BatchStats avg{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0), 0};
    for (const auto& s : parts) {
        if (s.channels() != c) throw DimensionError("average_stats: channel mismatch");
        for (std::size_t j = 0; j < c; ++j) {
            avg.mean[j] += s.mean[j];
            avg.var[j] += s.var[j];
        }
        avg.count += s.count;
    }
    const double n = static_cast<double>(parts.size());
    for (std::size_t j = 0; j < c; ++j) {
        avg.mean[j] /= n;
        avg.var[j] /= n;
    }
    return avg;
}

Tensor bn_apply(const Tensor& x, const BatchStats& stats, const NormParams& p) {
    check_params(p, "bn_apply");
    check_channels(x, p.channels(), "bn_apply");
    if (stats.channels() != p.channels()) {
        throw DimensionError("bn_apply: statistics have " + std::to_string(stats.channels()) + " channels, params " +
                             std::to_string(p.channels()));
    }
    return normalize(x, row_tensor(stats.mean), row_tensor(stats.var), p);
}

Tensor bn_batch(const Tensor& x, const NormParams& p) {
    check_params(p, "bn_batch");
    check_channels(x, p.channels(), "bn_batch");
    if (x.rows() == 0) throw DimensionError("bn_batch: empty slice");
    return normalize(x, mean(x, 0), var(x, 0), p);
}

Tensor plain_bn_forward(const Tensor& x, const WorkerLayout& layout, const NormParams& p) {
    check_channels(x, p.channels(), "plain_bn_forward");
    if (x.rows() != layout.batch_size()) {
        throw DimensionError("plain_bn_forward: batch of " + std::to_string(x.rows()) + " rows vs layout of " +
                             std::to_string(layout.batch_size()));
    }
    std::vector<Tensor> outs;
    outs.reserve(layout.num_workers());
    for (std::size_t w = 0; w < layout.num_workers(); ++w) {
        const auto [b, e] = layout.range(w);
        outs.push_back(bn_batch(slice_rows(x, b, e), p));
    }
    return concat_rows(outs);
}

Tensor synced_bn_forward(const Tensor& x, const WorkerLayout& layout, const NormParams& p) {
    check_channels(x, p.channels(), "synced_bn_forward");
    if (x.rows() != layout.batch_size()) {
        throw DimensionError("synced_bn_forward: batch of " + std::to_string(x.rows()) + " rows vs layout of " +
                             std::to_string(layout.batch_size()));
    }
    std::vector<Tensor> slices;
    for (std::size_t w = 0; w < layout.num_workers(); ++w) {
        const auto [b, e] = layout.range(w);
        slices.push_back(slice_rows(x, b, e));
    }
    const Tensor gathered = concat_rows(slices);
    const Tensor out = bn_batch(gathered, p);
    std::vector<Tensor> outs;
    for (std::size_t w = 0; w < layout.num_workers(); ++w) {
        const auto [b, e] = layout.range(w);
        outs.push_back(slice_rows(out, b, e));
    }
    return concat_rows(outs);
}

std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed) {
    return Rng(seed).permutation(n);
}

Tensor shuffling_bn_forward(const Tensor& x, const WorkerLayout& layout, const NormParams& p,
                            std::uint64_t perm_seed) {
    const std::vector<std::size_t> perm = shuffle_permutation(x.rows(), perm_seed);
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    const Tensor shuffled = gather_rows(x, perm);
    return gather_rows(plain_bn_forward(shuffled, layout, p), inverse);
}

std::uint64_t synced_bn_comm_bytes(std::size_t channels, std::size_t num_workers) {
    if (num_workers <= 1) return 0;
    return static_cast<std::uint64_t>(2 * (num_workers - 1)) * 2 * channels * sizeof(double);
}

double batch_weight(AlphaSemantics s, double alpha) {
    check_alpha(alpha);
    return s == AlphaSemantics::weight_on_batch ? alpha : 1.0 - alpha;
}

BatchStats blend_with_history(const BatchStats& batch, const MomentumBNState& state, double alpha) {
    const double w = batch_weight(state.semantics, alpha);
    if (w == 1.0 || !state.initialized) return batch;
    if (state.channels() != batch.channels()) {
        throw DimensionError("momentum BN: history has " + std::to_string(state.channels()) + " channels, batch " +
                             std::to_string(batch.channels()));
    }
    BatchStats used = batch;
    for (std::size_t j = 0; j < batch.channels(); ++j) {
        used.mean[j] = w * batch.mean[j] + (1.0 - w) * state.hist_mean[j];
        used.var[j] = w * batch.var[j] + (1.0 - w) * state.hist_var[j];
    }
    return used;
}

MomentumBNOutput momentum_bn_forward(const Tensor& x, const MomentumBNState& state, double alpha,
                                     const NormParams& p) {
    check_alpha(alpha);
    BatchStats s = batch_stats(x);
    BatchStats used = blend_with_history(s, state, alpha);
    Tensor out = bn_apply(x, used, p);
    return {std::move(out), std::move(s), std::move(used)};
}

double momentum_bn_lazy_commit(MomentumBNState& state, const BatchStats& s_v, const BatchStats& s_v2,
                               double alpha) {
    if (s_v.count != s_v2.count) {
        throw ValueError("lazy commit: views have different sample counts (" + std::to_string(s_v.count) + " vs " +
                         std::to_string(s_v2.count) + ")");
    }
    const BatchStats views[] = {s_v, s_v2};
    state.pending.assign(std::begin(views), std::end(views));
    return commit_pending(state, alpha);
}

double commit_pending(MomentumBNState& state, double alpha) {
    if (state.pending.empty()) throw Error("momentum BN commit with no pending statistics");
    const double w = batch_weight(state.semantics, alpha);
    const BatchStats avg = average_stats(state.pending);
    if (state.channels() != avg.channels()) {
        throw DimensionError("momentum BN commit: history has " + std::to_string(state.channels()) +
                             " channels, statistics " + std::to_string(avg.channels()));
    }
    double drift2 = 0.0;
    for (std::size_t j = 0; j < avg.channels(); ++j) {
        const double m = state.initialized ? w * avg.mean[j] + (1.0 - w) * state.hist_mean[j] : avg.mean[j];
        const double v = state.initialized ? w * avg.var[j] + (1.0 - w) * state.hist_var[j] : avg.var[j];
        drift2 += (m - state.hist_mean[j]) * (m - state.hist_mean[j]) + (v - state.hist_var[j]) * (v - state.hist_var[j]);
        state.hist_mean[j] = m;
        state.hist_var[j] = v;
    }
    state.pending.clear();
    state.initialized = true;
    ++state.commits;
    return std::sqrt(drift2);
}

}  // namespace m2t
