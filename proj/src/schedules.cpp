#include "m2t/schedules.h"

#include <cmath>
#include <numbers>
#include <string>

#include "m2t/errors.h"
#include "m2t/health.h"

namespace m2t {

void ScheduleSpec::validate() const {
    if (!(base >= 0.0)) throw ValueError("schedule base must be >= 0");
    if (total_steps < 1) throw ValueError("schedule needs at least one step");
    if (warmup_steps < 0 || warmup_steps >= total_steps) {
        throw ValueError("warmup steps (" + std::to_string(warmup_steps) + ") must be in [0, " +
                         std::to_string(total_steps) + ")");
    }
    if (!(warmup_factor > 0.0 && warmup_factor <= 1.0)) throw ValueError("warmup factor must be in (0, 1]");
}

double cosine_value(double base, std::int64_t k, std::int64_t K) {
    if (K < 1) throw ValueError("cosine schedule needs K >= 1");
    if (k > K) {
        health().schedule_clamps++;
        k = K;
    }
    if (k < 0) k = 0;
    return base * (std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(K)) + 1.0) / 2.0;
}

double schedule_value(const ScheduleSpec& spec, std::int64_t k) {
    if (spec.kind == ScheduleKind::constant) return spec.base;
    return cosine_value(spec.base, k, spec.total_steps);
}

double lr_at(const ScheduleSpec& spec, std::int64_t k) {
    if (k < spec.warmup_steps) {
        const double t = static_cast<double>(k) / static_cast<double>(spec.warmup_steps);
        return spec.base * (spec.warmup_factor + (1.0 - spec.warmup_factor) * t);
    }
    if (spec.kind == ScheduleKind::constant) return spec.base;
    return cosine_value(spec.base, k - spec.warmup_steps, spec.total_steps - spec.warmup_steps);
}

ScaledHyper apply_linear_scaling(double base_lr, double m_base, double batch_scale) {
    if (!(batch_scale > 0.0)) throw ValueError("batch scale must be positive");
    ScaledHyper out{base_lr * batch_scale, m_base * batch_scale};
    if (out.m_base > 1.0) {
        health().momentum_clamps++;
        out.m_base = 1.0;
    }
    return out;
}

}  // namespace m2t
