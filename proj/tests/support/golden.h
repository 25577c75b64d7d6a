#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace m2t::testing {

struct QuantityError {
    std::string name;
    std::size_t count = 0;  // values compared
    double max_abs_error = 0.0;
};

struct GoldenComparison {
    std::vector<QuantityError> quantities;
    double worst() const;
    std::size_t values_compared() const;
};

/// Replays the scripted iteration from the reference trace through
/// train_step_views and compares every recorded intermediate.
GoldenComparison run_golden_trace(const std::filesystem::path& trace_json);

}  // namespace m2t::testing
