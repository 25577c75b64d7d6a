#pragma once

#include <span>
#include <string>
#include <vector>

#include "m2t/model.h"

namespace m2t {

enum class OptimizerKind { sgd, lars };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct OptimizerHyper {
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double lars_eta = 0.001;  // trust coefficient
    /// Biases and BN gamma/beta skip weight decay and LARS adaptation.
    bool exclude_bias_and_bn = true;
};

/// Momentum buffers mirroring each parameter block.
class OptimizerState {
public:
    struct Slot {
        std::string name;
        Tensor param;
        bool excluded;
        std::vector<double> buffer;
    };

    OptimizerState(const std::vector<Mlp::Param>& params, OptimizerHyper hyper);

    const OptimizerHyper& hyper() const { return hyper_; }
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }
    void zero_grad();

private:
    OptimizerHyper hyper_;
    std::vector<Slot> slots_;
};

/// buf <- momentum * buf + (g + wd * w);  w <- w - lr * buf.
void sgd_update(std::span<double> w, std::span<const double> g, std::span<double> buf, double lr, double momentum,
                double weight_decay);

/// Local rate eta * ||w|| / (||g + wd * w|| + 1e-9), zero when ||w|| = 0.
double lars_local_lr(std::span<const double> w, std::span<const double> g, double weight_decay, double eta);

/// buf <- momentum * buf + local_lr * (g + wd * w);  w <- w - lr * buf.
/// Returns the local rate used.
double lars_update(std::span<double> w, std::span<const double> g, std::span<double> buf, double lr, double momentum,
                   double weight_decay, double eta);

/// SGD with momentum over every slot. Parameters without a gradient are
/// treated as having a zero gradient.
void sgd_step(OptimizerState& state, double lr);

/// LARS over non-excluded slots; excluded slots take the sgd_step update.
void lars_step(OptimizerState& state, double lr);

void optimizer_step(OptimizerKind kind, OptimizerState& state, double lr);

}  // namespace m2t
