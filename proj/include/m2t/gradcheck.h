#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "m2t/tensor.h"

namespace m2t {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct GradBlockReport {
    std::string name;
    std::size_t size = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t nan_count = 0;
};

struct GradCheckReport {
    std::vector<GradBlockReport> blocks;
    double tolerance = 0.0;

    double max_rel_error() const;
    bool has_nan() const;
    bool passed() const { return !has_nan() && max_rel_error() <= tolerance; }
};

/// Relative error used by the gradient oracle:
/// |a - n| / max(|a|, |n|, 1e-5). The floor keeps near-zero gradients from
/// turning central-difference roundoff into a spurious failure.
double grad_rel_error(double autodiff, double numeric);

/// Compares autodiff gradients of `f` with central differences
/// (f(x+h) - f(x-h)) / 2h for every element of every parameter block.
/// `f` must rebuild the graph from the parameters on each call and be
/// deterministic. NaN entries are counted, not thrown.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                                  double h = 1e-5, double tol = 1e-4);

}  // namespace m2t
