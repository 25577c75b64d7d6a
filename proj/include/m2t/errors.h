#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace m2t {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or channel counts.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A scalar argument outside its admissible range (alpha, m, k, ...).
class ValueError : public Error {
public:
    using Error::Error;
};

/// Malformed binary input. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Checkpoint written with a format version this build does not understand.
class VersionError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration. `path()` names the offending field, e.g. "dataset.spread".
class ConfigError : public Error {
public:
    ConfigError(std::string path, const std::string& what)
        : Error(path + ": " + what), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Training produced a NaN/Inf loss and was aborted.
class NonFiniteLossError : public Error {
public:
    NonFiniteLossError(const std::string& what, std::int64_t iteration)
        : Error(what), iteration_(iteration) {}

    std::int64_t iteration() const noexcept { return iteration_; }

private:
    std::int64_t iteration_;
};

}  // namespace m2t
