#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m2t/rng.h"
#include "m2t/tensor.h"

namespace m2t {

enum class DataSource { synthetic, idx_file };

struct Dataset {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<double> samples;  // rows x dim, row-major
    std::vector<int> labels;
    int num_classes = 0;
    DataSource source = DataSource::synthetic;
    /// Set for image data (IDX): height x width of each flattened sample.
    std::optional<std::pair<std::size_t, std::size_t>> image_shape;

    std::span<const double> row(std::size_t i) const { return {samples.data() + i * dim, dim}; }
    /// Rows `idx` stacked into a [n x dim] constant tensor.
    Tensor batch(std::span<const std::size_t> idx) const;
    Dataset subset(std::span<const std::size_t> idx) const;
    /// Throws unless labels lie in [0, num_classes) and every value is finite.
    void validate() const;
};

/// Class c ~ N(mu_c, spread^2 I) with seeded random means of norm 1.
Dataset synth_clusters(int num_classes, std::size_t dim, std::size_t per_class, double spread, std::uint64_t seed);

/// Seeded split into (train, test); `test_fraction` of the rows go to test.
std::pair<Dataset, Dataset> train_test_split(const Dataset& d, double test_fraction, std::uint64_t seed);

// IDX (big-endian) files: magic 0x00000803 for u8 images [n x rows x cols],
// 0x00000801 for u8 labels [n].
struct IdxImages {
    std::size_t count = 0, height = 0, width = 0;
    std::vector<std::uint8_t> pixels;
};

IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// Image + label files as a Dataset with pixels scaled to [0, 1] and each
/// image flattened to a vector. Count mismatch is a FormatError.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Writes a dataset with values in [0, 1] and a 2-D image shape as IDX files
/// (values are rounded to the nearest of 256 levels).
void dump_idx(const Dataset& d, const std::filesystem::path& images, const std::filesystem::path& labels);

enum class ViewRole { student_view, teacher_view };

struct AugmentSpec {
    double noise_std = 0.0;
    double mask_prob = 0.0;  // per-coordinate dropout to 0
    double scale_lo = 1.0;   // per-sample multiplicative factor ~ U[lo, hi]
    double scale_hi = 1.0;
    bool flip = false;         // images: horizontal flip with p = 0.5
    std::size_t crop_pad = 0;  // images: zero-pad then random crop back
    double solarize_prob_student = 0.0;
    double solarize_prob_teacher = 0.2;
    double solarize_threshold = 0.5;  // x -> 1 - x where x > threshold

    static AugmentSpec off();
    void validate() const;
};

/// One augmented copy of `batch`. Randomness is drawn per sample, in row order.
Tensor augment(const Tensor& batch, const AugmentSpec& spec, Rng& rng, ViewRole role,
               std::optional<std::pair<std::size_t, std::size_t>> image_shape = std::nullopt);

/// Two independently augmented views (v for the student role, v' for the
/// teacher role); v is drawn entirely before v'.
std::pair<Tensor, Tensor> make_views(const Tensor& batch, const AugmentSpec& spec, Rng& rng,
                                     std::optional<std::pair<std::size_t, std::size_t>> image_shape = std::nullopt);

}  // namespace m2t
