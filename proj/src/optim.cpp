#include "m2t/optim.h"

#include <cmath>

#include "m2t/errors.h"

namespace m2t {

namespace {

void check_sizes(std::size_t w, std::size_t g, std::size_t b) {
    if (w != g || w != b) {
        throw DimensionError("optimizer: parameter of " + std::to_string(w) + " values, gradient of " +
                             std::to_string(g) + ", buffer of " + std::to_string(b));
    }
}

std::vector<double> grad_or_zero(const Tensor& p) {
    if (p.has_grad()) return {p.grad().begin(), p.grad().end()};
    return std::vector<double>(p.numel(), 0.0);
}

double decay_for(const OptimizerState::Slot& s, const OptimizerHyper& h) {
    return (s.excluded && h.exclude_bias_and_bn) ? 0.0 : h.weight_decay;
}

}  // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "lars"; }

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "lars") return OptimizerKind::lars;
    throw ValueError("unknown optimizer '" + s + "' (expected sgd or lars)");
}

OptimizerState::OptimizerState(const std::vector<Mlp::Param>& params, OptimizerHyper hyper) : hyper_(hyper) {
    for (const auto& p : params) {
        slots_.push_back({p.name, p.tensor, p.excluded, std::vector<double>(p.tensor.numel(), 0.0)});
    }
}

void OptimizerState::zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
}

void sgd_update(std::span<double> w, std::span<const double> g, std::span<double> buf, double lr, double momentum,
                double weight_decay) {
    check_sizes(w.size(), g.size(), buf.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        buf[i] = momentum * buf[i] + (g[i] + weight_decay * w[i]);
        w[i] -= lr * buf[i];
    }
}

double lars_local_lr(std::span<const double> w, std::span<const double> g, double weight_decay, double eta) {
    double w2 = 0.0, u2 = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double u = g[i] + weight_decay * w[i];
        w2 += w[i] * w[i];
        u2 += u * u;
    }
    const double wn = std::sqrt(w2);
    if (wn == 0.0) return 0.0;
    return eta * wn / (std::sqrt(u2) + 1e-9);
}

double lars_update(std::span<double> w, std::span<const double> g, std::span<double> buf, double lr, double momentum,
                   double weight_decay, double eta) {
    check_sizes(w.size(), g.size(), buf.size());
    const double local = lars_local_lr(w, g, weight_decay, eta);
    for (std::size_t i = 0; i < w.size(); ++i) {
        buf[i] = momentum * buf[i] + local * (g[i] + weight_decay * w[i]);
        w[i] -= lr * buf[i];
    }
    return local;
}

void sgd_step(OptimizerState& state, double lr) {
    const auto& h = state.hyper();
    for (auto& s : state.slots()) {
        const auto g = grad_or_zero(s.param);
        sgd_update(s.param.mutable_values(), g, s.buffer, lr, h.momentum, decay_for(s, h));
    }
}

void lars_step(OptimizerState& state, double lr) {
    const auto& h = state.hyper();
    for (auto& s : state.slots()) {
        const auto g = grad_or_zero(s.param);
        if (s.excluded && h.exclude_bias_and_bn) {
            sgd_update(s.param.mutable_values(), g, s.buffer, lr, h.momentum, 0.0);
        } else {
            lars_update(s.param.mutable_values(), g, s.buffer, lr, h.momentum, h.weight_decay, h.lars_eta);
        }
    }
}

void optimizer_step(OptimizerKind kind, OptimizerState& state, double lr) {
    if (kind == OptimizerKind::sgd) {
        sgd_step(state, lr);
    } else {
        lars_step(state, lr);
    }
}

}  // namespace m2t
