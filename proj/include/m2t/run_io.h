#pragma once

#include <filesystem>
#include <string>

#include "m2t/config.h"
#include "m2t/trainer.h"

namespace m2t {

const char* code_version();

struct RunPaths {
    std::filesystem::path dir;
    std::filesystem::path manifest;    // config snapshot, seed, version, start time, outputs
    std::filesystem::path metrics;     // metrics.csv
    std::filesystem::path checkpoint;  // checkpoint.bin
    std::filesystem::path completion;  // end time and status, written last
};
RunPaths run_paths(const std::filesystem::path& dir);

/// UTC, ISO 8601 with seconds.
std::string utc_timestamp();

/// Writes the manifest, streams metrics to CSV (flushed per row) and saves
/// the final teacher checkpoint. The manifest is written once, before the
/// first iteration. On a non-finite loss the completion file records the
/// failure and the exception propagates.
TrainResult pretrain_to_dir(const TrainConfig& c, const std::filesystem::path& dir);

}  // namespace m2t
