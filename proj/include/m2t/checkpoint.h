#pragma once

// Versioned binary checkpoint of the teacher encoder.
//
// Layout (all integers and doubles little-endian):
//   8 bytes   magic "M2TCKPT\0"
//   u32       format version
//   u32       header length H, then H bytes of UTF-8 JSON header
//             {encoder: {widths, use_bn, use_relu}, bn_eps, alpha_semantics, channels}
//   u32       array count
//   per array: u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values[prod(dims)]
//
// The array set must equal expected_array_names(encoder spec) exactly.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "m2t/model.h"

namespace m2t {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;

    bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    MlpSpec encoder;
    double bn_eps = 1e-5;
    AlphaSemantics alpha_semantics = AlphaSemantics::weight_on_batch;
    std::vector<NamedArray> arrays;

    const NamedArray& array(const std::string& name) const;
};

/// Names derived from the encoder spec, in serialization order:
/// encoder.<l>.weight, .bias, and for BN layers .bn.gamma, .bn.beta,
/// .bn.hist_mean, .bn.hist_var.
std::vector<std::string> expected_array_names(const MlpSpec& encoder);

/// Teacher encoder f_xi weights and its BN histories. The predictor and
/// projectors are not part of the payload.
Checkpoint dump_teacher(const StudentTeacherPair& pair);

/// Checkpoint of an arbitrary (teacher-style) encoder, e.g. for fixtures.
Checkpoint checkpoint_from_encoder(const Mlp& encoder, AlphaSemantics semantics);

/// Rebuilds the frozen encoder, with BN histories marked initialized.
Mlp encoder_from_checkpoint(const Checkpoint& ck);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
/// Throws VersionError on an unknown version and FormatError on malformed
/// bytes or an array set that does not match the header's encoder spec.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace m2t
