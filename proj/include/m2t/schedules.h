#pragma once

#include <cstdint>
#include <utility>

namespace m2t {

enum class ScheduleKind { cosine_to_zero, constant };

struct ScheduleSpec {
    double base = 0.0;
    std::int64_t total_steps = 1;  // K
    ScheduleKind kind = ScheduleKind::cosine_to_zero;
    std::int64_t warmup_steps = 0;
    double warmup_factor = 1.0;

    /// Throws ValueError unless base >= 0, K >= 1, 0 <= warmup < K and factor in (0, 1].
    void validate() const;
};

/// base * (cos(pi * k / K) + 1) / 2. k > K is clamped to K and counted in
/// health().schedule_clamps; k < 0 is clamped to 0.
double cosine_value(double base, std::int64_t k, std::int64_t K);

/// Schedule value at step k: the constant base, or cosine_to_zero over [0, K].
double schedule_value(const ScheduleSpec& spec, std::int64_t k);

/// Learning rate at step k: linear warmup from base * warmup_factor to base
/// over warmup_steps, then cosine decay to zero over the remaining steps.
double lr_at(const ScheduleSpec& spec, std::int64_t k);

struct ScaledHyper {
    double lr;
    double m_base;
};

/// Extended linear scaling rule: multiplying the batch by k multiplies both
/// the learning rate and the base EMA coefficient by k. m_base is clamped to
/// 1 (counted in health().momentum_clamps).
ScaledHyper apply_linear_scaling(double base_lr, double m_base, double batch_scale);

}  // namespace m2t
