#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <unistd.h>

#include "m2t/data.h"
#include "m2t/errors.h"

using namespace m2t;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("m2t_data_" + std::to_string(::getpid()) + "_" + name);
    std::filesystem::create_directories(p);
    return p;
}

IdxImages fixture() {
    IdxImages im;
    im.count = 4;
    im.height = im.width = 28;
    im.pixels.resize(4 * 784);
    for (std::size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
    im.pixels[0] = 255;
    return im;
}

}  // namespace

TEST(Synth, ZeroSpreadIsClassMean) {
    const Dataset d = synth_clusters(3, 5, 4, 0.0, 1);
    EXPECT_EQ(d.rows, 12u);
    for (std::size_t i = 0; i < d.rows; ++i)
        for (std::size_t j = 0; j < d.rows; ++j)
            if (d.labels[i] == d.labels[j])
                for (std::size_t c = 0; c < d.dim; ++c) EXPECT_EQ(d.row(i)[c], d.row(j)[c]);
}

TEST(Synth, SeedDeterminism) {
    const Dataset a = synth_clusters(4, 6, 10, 0.3, 7), b = synth_clusters(4, 6, 10, 0.3, 7);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NE(a.samples, synth_clusters(4, 6, 10, 0.3, 8).samples);
}

TEST(Split, SizesAndDisjoint) {
    const Dataset d = synth_clusters(2, 3, 50, 0.1, 0);
    const auto [tr, te] = train_test_split(d, 0.2, 3);
    EXPECT_EQ(tr.rows + te.rows, 100u);
    EXPECT_EQ(te.rows, 20u);
}

TEST(Idx, FixtureShapesAndScaling) {
    const auto dir = scratch("fixture");
    write_idx_images(dir / "img", fixture());
    const std::vector<std::uint8_t> labels{0, 1, 2, 1};
    write_idx_labels(dir / "lbl", labels);
    const Dataset d = load_idx(dir / "img", dir / "lbl");
    EXPECT_EQ(d.rows, 4u);
    EXPECT_EQ(d.dim, 784u);
    EXPECT_EQ(d.row(0)[0], 1.0);
    EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 2, 1}));
    std::filesystem::remove_all(dir);
}

TEST(Idx, RoundTripByteExact) {
    const auto dir = scratch("roundtrip");
    const IdxImages im = fixture();
    write_idx_images(dir / "img", im);
    write_idx_labels(dir / "lbl", std::vector<std::uint8_t>{3, 3, 1, 0});
    const Dataset d = load_idx(dir / "img", dir / "lbl");
    dump_idx(d, dir / "img2", dir / "lbl2");
    EXPECT_EQ(read_idx_images(dir / "img2").pixels, im.pixels);
    for (std::size_t i = 0; i < d.samples.size(); ++i) EXPECT_EQ(std::lround(d.samples[i] * 255.0), im.pixels[i]);
    std::filesystem::remove_all(dir);
}

TEST(Idx, LabelCountMismatch) {
    const auto dir = scratch("mismatch");
    write_idx_images(dir / "img", fixture());
    write_idx_labels(dir / "lbl", std::vector<std::uint8_t>{1, 2, 3});
    EXPECT_THROW(load_idx(dir / "img", dir / "lbl"), FormatError);
    std::filesystem::remove_all(dir);
}

TEST(Idx, BadMagicAndTruncation) {
    const auto dir = scratch("bad");
    write_idx_images(dir / "img", fixture());
    {
        std::fstream f(dir / "img", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(3);
        f.put(0x01);
    }
    try {
        read_idx_images(dir / "img");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
    write_idx_images(dir / "img", fixture());
    std::filesystem::resize_file(dir / "img", 100);
    EXPECT_THROW(read_idx_images(dir / "img"), FormatError);
    std::filesystem::remove_all(dir);
}

TEST(Augment, AllOffIsIdentity) {
    const Dataset d = synth_clusters(2, 4, 3, 0.2, 0);
    std::vector<std::size_t> idx{0, 1, 2, 3};
    const Tensor b = d.batch(idx);
    Rng rng(0);
    const auto [v, v2] = make_views(b, AugmentSpec::off(), rng);
    for (std::size_t i = 0; i < b.numel(); ++i) {
        EXPECT_EQ(v.at(i), b.at(i));
        EXPECT_EQ(v2.at(i), b.at(i));
    }
}

TEST(Augment, SeededNoise) {
    const Tensor b = Tensor::full({4, 3}, 0.5);
    AugmentSpec s = AugmentSpec::off();
    s.noise_std = 0.1;
    Rng r1(4), r2(4);
    const auto a = make_views(b, s, r1), c = make_views(b, s, r2);
    for (std::size_t i = 0; i < b.numel(); ++i) {
        EXPECT_EQ(a.first.at(i), c.first.at(i));
        EXPECT_EQ(a.second.at(i), c.second.at(i));
    }
    EXPECT_NE(a.first.at(0), a.second.at(0));
}

TEST(Augment, FullMaskZeroes) {
    AugmentSpec s = AugmentSpec::off();
    s.mask_prob = 1.0;
    Rng rng(0);
    const auto [v, v2] = make_views(Tensor::full({3, 3}, 0.7), s, rng);
    for (double x : v.values()) EXPECT_EQ(x, 0.0);
    for (double x : v2.values()) EXPECT_EQ(x, 0.0);
}

TEST(Augment, SolarizeTeacherOnly) {
    AugmentSpec s = AugmentSpec::off();
    s.solarize_prob_teacher = 1.0;
    Rng rng(0);
    const auto [v, v2] = make_views(Tensor::matrix({{0.2, 0.8}}), s, rng);
    EXPECT_EQ(v.at(1), 0.8);
    EXPECT_EQ(v2.at(0), 0.2);
    EXPECT_NEAR(v2.at(1), 0.2, 1e-15);
}
