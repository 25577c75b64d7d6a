#include "m2t/gradcheck.h"

#include <algorithm>
#include <cmath>

namespace m2t {

double GradCheckReport::max_rel_error() const {
    double worst = 0.0;
    for (const auto& b : blocks) worst = std::max(worst, b.max_rel_error);
    return worst;
}

bool GradCheckReport::has_nan() const {
    return std::any_of(blocks.begin(), blocks.end(), [](const GradBlockReport& b) { return b.nan_count > 0; });
}

double grad_rel_error(double autodiff, double numeric) {
    const double denom = std::max({std::abs(autodiff), std::abs(numeric), 1e-5});
    return std::abs(autodiff - numeric) / denom;
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<NamedTensor> params, double h,
                                  double tol) {
    for (auto& p : params) p.tensor.zero_grad();
    f().backward();

    GradCheckReport report;
    report.tolerance = tol;
    for (auto& p : params) {
        GradBlockReport block;
        block.name = p.name;
        block.size = p.tensor.numel();
        std::vector<double> analytic(p.tensor.numel(), 0.0);
        if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());

        auto w = p.tensor.mutable_values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double orig = w[i];
            double plus = 0.0, minus = 0.0;
            {
                NoGradGuard guard;
                w[i] = orig + h;
                plus = f().item();
                w[i] = orig - h;
                minus = f().item();
            }
            w[i] = orig;
            const double numeric = (plus - minus) / (2.0 * h);
            if (std::isnan(numeric) || std::isnan(analytic[i])) {
                ++block.nan_count;
                continue;
            }
            block.max_abs_error = std::max(block.max_abs_error, std::abs(analytic[i] - numeric));
            block.max_rel_error = std::max(block.max_rel_error, grad_rel_error(analytic[i], numeric));
        }
        report.blocks.push_back(std::move(block));
    }
    for (auto& p : params) p.tensor.zero_grad();
    return report;
}

}  // namespace m2t
