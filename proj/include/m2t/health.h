#pragma once

#include <atomic>
#include <cstdint>

namespace m2t {

// Process-wide counters for numerically suspicious events that are reported
// rather than thrown.
struct RunHealth {
    std::atomic<std::uint64_t> div_by_zero{0};
    std::atomic<std::uint64_t> zero_norm_rows{0};
    std::atomic<std::uint64_t> nonfinite_losses{0};
    std::atomic<std::uint64_t> schedule_clamps{0};
    std::atomic<std::uint64_t> momentum_clamps{0};

    void reset() {
        div_by_zero = 0;
        zero_norm_rows = 0;
        nonfinite_losses = 0;
        schedule_clamps = 0;
        momentum_clamps = 0;
    }
};

RunHealth& health();

}  // namespace m2t
