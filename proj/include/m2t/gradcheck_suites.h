#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace m2t {

struct SuiteResult {
    std::string name;
    std::size_t trials = 0;
    std::size_t failed_trials = 0;
    double worst_rel_error = 0.0;
    std::size_t nan_count = 0;
    bool passed() const { return failed_trials == 0 && nan_count == 0; }
};

struct SuiteOptions {
    std::size_t trials = 100;
    std::uint64_t seed = 7;
    double tolerance = 1e-4;
    /// Adds a suite whose op has a deliberately wrong backward rule.
    bool inject_faulty = false;
};

/// Central-difference checks of every differentiable op, the BN variants,
/// the full BYOL loss through a small student/teacher pair and InfoNCE.
/// Inputs are drawn uniformly from [-2, 2] (positive ranges where the op's
/// domain requires it).
std::vector<SuiteResult> run_gradcheck_suites(const SuiteOptions& opt = {});

std::vector<std::string> gradcheck_suite_names(bool inject_faulty = false);

}  // namespace m2t
