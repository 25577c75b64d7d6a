#include "m2t/data.h"

#include <cstdio>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "m2t/errors.h"

namespace m2t {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::string& what) {
    if (offset + 4 > buf.size()) throw FormatError("truncated IDX header reading " + what, offset);
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
}

void check_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
    if (got != want) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "bad IDX magic 0x%08x (expected 0x%08x)", got, want);
        throw FormatError(std::string(buf) + " in " + path.string(), 0);
    }
}

}  // namespace

Tensor Dataset::batch(std::span<const std::size_t> idx) const {
    std::vector<double> v;
    v.reserve(idx.size() * dim);
    for (std::size_t i : idx) {
        if (i >= rows) throw DimensionError("dataset row " + std::to_string(i) + " out of range");
        auto r = row(i);
        v.insert(v.end(), r.begin(), r.end());
    }
    return Tensor::from({idx.size(), dim}, std::move(v));
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.rows = idx.size();
    out.dim = dim;
    out.num_classes = num_classes;
    out.source = source;
    out.image_shape = image_shape;
    out.samples.reserve(idx.size() * dim);
    for (std::size_t i : idx) {
        auto r = row(i);
        out.samples.insert(out.samples.end(), r.begin(), r.end());
        if (!labels.empty()) out.labels.push_back(labels[i]);
    }
    return out;
}

void Dataset::validate() const {
    if (samples.size() != rows * dim) throw DimensionError("dataset holds the wrong number of values");
    for (double v : samples) {
        if (!std::isfinite(v)) throw ValueError("dataset contains a non-finite value");
    }
    if (!labels.empty() && labels.size() != rows) throw DimensionError("dataset label count mismatch");
    for (int l : labels) {
        if (l < 0 || l >= num_classes) throw ValueError("label " + std::to_string(l) + " outside [0, num_classes)");
    }
}

Dataset synth_clusters(int num_classes, std::size_t dim, std::size_t per_class, double spread, std::uint64_t seed) {
    if (num_classes < 2) throw ValueError("synth_clusters needs at least 2 classes");
    if (dim < 2) throw ValueError("synth_clusters needs dim >= 2");
    if (!(spread >= 0.0)) throw ValueError("spread must be >= 0");
    Rng rng = Rng::substream(seed, "data");
    std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim));
    for (auto& m : means) {
        double n2 = 0.0;
        for (double& x : m) {
            x = rng.normal();
            n2 += x * x;
        }
        const double n = std::sqrt(n2);
        for (double& x : m) x /= n;
    }
    Dataset d;
    d.rows = static_cast<std::size_t>(num_classes) * per_class;
    d.dim = dim;
    d.num_classes = num_classes;
    d.source = DataSource::synthetic;
    d.samples.reserve(d.rows * dim);
    for (int c = 0; c < num_classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            for (std::size_t j = 0; j < dim; ++j) d.samples.push_back(means[c][j] + spread * rng.normal());
            d.labels.push_back(c);
        }
    }
    return d;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& d, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValueError("test fraction must be in (0, 1)");
    std::vector<std::size_t> perm = Rng::substream(seed, "split").permutation(d.rows);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(d.rows)));
    std::vector<std::size_t> test(perm.begin(), perm.begin() + n_test);
    std::vector<std::size_t> train(perm.begin() + n_test, perm.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {d.subset(train), d.subset(test)};
}

IdxImages read_idx_images(const std::filesystem::path& path) {
    const auto buf = read_file(path);
    check_magic(read_be32(buf, 0, "magic"), kIdxImagesMagic, path);
    IdxImages img;
    img.count = read_be32(buf, 4, "image count");
    img.height = read_be32(buf, 8, "row count");
    img.width = read_be32(buf, 12, "column count");
    const std::size_t need = img.count * img.height * img.width;
    if (buf.size() - 16 < need) {
        throw FormatError("truncated IDX image data: need " + std::to_string(need) + " bytes, have " +
                              std::to_string(buf.size() - 16),
                          buf.size());
    }
    img.pixels.assign(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(need));
    return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
    const auto buf = read_file(path);
    check_magic(read_be32(buf, 0, "magic"), kIdxLabelsMagic, path);
    const std::size_t count = read_be32(buf, 4, "label count");
    if (buf.size() - 8 < count) {
        throw FormatError("truncated IDX label data: need " + std::to_string(count) + " bytes, have " +
                              std::to_string(buf.size() - 8),
                          buf.size());
    }
    return {buf.begin() + 8, buf.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    put_be32(out, kIdxImagesMagic);
    put_be32(out, static_cast<std::uint32_t>(images.count));
    put_be32(out, static_cast<std::uint32_t>(images.height));
    put_be32(out, static_cast<std::uint32_t>(images.width));
    out.write(reinterpret_cast<const char*>(images.pixels.data()), static_cast<std::streamsize>(images.pixels.size()));
    if (!out) throw Error("write failed for " + path.string());
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    put_be32(out, kIdxLabelsMagic);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
    if (!out) throw Error("write failed for " + path.string());
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const IdxImages img = read_idx_images(images);
    const auto lab = read_idx_labels(labels);
    if (lab.size() != img.count) {
        throw FormatError("label file has " + std::to_string(lab.size()) + " entries for " +
                              std::to_string(img.count) + " images",
                          4);
    }
    Dataset d;
    d.rows = img.count;
    d.dim = img.height * img.width;
    d.source = DataSource::idx_file;
    d.image_shape = std::make_pair(img.height, img.width);
    d.samples.reserve(img.pixels.size());
    for (std::uint8_t p : img.pixels) d.samples.push_back(static_cast<double>(p) / 255.0);
    int max_label = 0;
    for (std::uint8_t l : lab) {
        d.labels.push_back(l);
        max_label = std::max(max_label, static_cast<int>(l));
    }
    d.num_classes = max_label + 1;
    return d;
}

void dump_idx(const Dataset& d, const std::filesystem::path& images, const std::filesystem::path& labels) {
    IdxImages img;
    img.count = d.rows;
    if (d.image_shape) {
        img.height = d.image_shape->first;
        img.width = d.image_shape->second;
    } else {
        img.height = 1;
        img.width = d.dim;
    }
    img.pixels.reserve(d.samples.size());
    for (double v : d.samples) {
        img.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
    write_idx_images(images, img);
    std::vector<std::uint8_t> lab(d.labels.begin(), d.labels.end());
    write_idx_labels(labels, lab);
}

AugmentSpec AugmentSpec::off() {
    AugmentSpec s;
    s.solarize_prob_teacher = 0.0;
    return s;
}

void AugmentSpec::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw ValueError(std::string(name) + " must be in [0, 1]");
    };
    prob(mask_prob, "mask_prob");
    prob(solarize_prob_student, "solarize_prob_student");
    prob(solarize_prob_teacher, "solarize_prob_teacher");
    if (!(noise_std >= 0.0)) throw ValueError("noise_std must be >= 0");
    if (!(scale_lo > 0.0 && scale_hi >= scale_lo)) throw ValueError("scale range must be positive and ordered");
}

Tensor augment(const Tensor& batch, const AugmentSpec& spec, Rng& rng, ViewRole role,
               std::optional<std::pair<std::size_t, std::size_t>> image_shape) {
    spec.validate();
    const std::size_t n = batch.rows(), d = batch.cols();
    if (image_shape && image_shape->first * image_shape->second != d) {
        throw DimensionError("image shape does not match sample width");
    }
    const double solarize_p = role == ViewRole::student_view ? spec.solarize_prob_student : spec.solarize_prob_teacher;
    std::vector<double> out(batch.values().begin(), batch.values().end());
    std::vector<double> tmp(d);
    for (std::size_t i = 0; i < n; ++i) {
        double* x = &out[i * d];
        if (spec.scale_hi != spec.scale_lo || spec.scale_lo != 1.0) {
            const double s = rng.uniform(spec.scale_lo, spec.scale_hi);
            for (std::size_t j = 0; j < d; ++j) x[j] *= s;
        }
        if (image_shape) {
            const auto [h, w] = *image_shape;
            if (spec.crop_pad > 0) {
                const auto p = static_cast<std::ptrdiff_t>(spec.crop_pad);
                const auto dy = static_cast<std::ptrdiff_t>(rng.below(2 * spec.crop_pad + 1)) - p;
                const auto dx = static_cast<std::ptrdiff_t>(rng.below(2 * spec.crop_pad + 1)) - p;
                for (std::size_t r = 0; r < h; ++r)
                    for (std::size_t c = 0; c < w; ++c) {
                        const auto sr = static_cast<std::ptrdiff_t>(r) + dy;
                        const auto sc = static_cast<std::ptrdiff_t>(c) + dx;
                        const bool inside = sr >= 0 && sc >= 0 && sr < static_cast<std::ptrdiff_t>(h) &&
                                            sc < static_cast<std::ptrdiff_t>(w);
                        tmp[r * w + c] = inside ? x[sr * static_cast<std::ptrdiff_t>(w) + sc] : 0.0;
                    }
                std::copy(tmp.begin(), tmp.end(), x);
            }
            if (spec.flip && rng.bernoulli(0.5)) {
                for (std::size_t r = 0; r < h; ++r) std::reverse(x + r * w, x + (r + 1) * w);
            }
        }
        if (spec.noise_std > 0.0) {
            for (std::size_t j = 0; j < d; ++j) x[j] += spec.noise_std * rng.normal();
        }
        if (spec.mask_prob > 0.0) {
            for (std::size_t j = 0; j < d; ++j)
                if (rng.bernoulli(spec.mask_prob)) x[j] = 0.0;
        }
        if (solarize_p > 0.0 && rng.bernoulli(solarize_p)) {
            for (std::size_t j = 0; j < d; ++j)
                if (x[j] > spec.solarize_threshold) x[j] = 1.0 - x[j];
        }
    }
    return Tensor::from({n, d}, std::move(out));
}

std::pair<Tensor, Tensor> make_views(const Tensor& batch, const AugmentSpec& spec, Rng& rng,
                                     std::optional<std::pair<std::size_t, std::size_t>> image_shape) {
    Tensor v = augment(batch, spec, rng, ViewRole::student_view, image_shape);
    Tensor v2 = augment(batch, spec, rng, ViewRole::teacher_view, image_shape);
    return {std::move(v), std::move(v2)};
}

}  // namespace m2t
