#include <gtest/gtest.h>

#include "m2t/checkpoint.h"
#include "m2t/errors.h"
#include "m2t/model.h"

using namespace m2t;

namespace {

Tensor batch(std::uint64_t seed, std::size_t n, std::size_t c) {
    Rng rng(seed);
    std::vector<double> v(n * c);
    for (double& x : v) x = rng.uniform(-2, 2);
    return Tensor::from({n, c}, v);
}

StudentTeacherPair tiny_pair(std::uint64_t seed = 0) {
    Rng rng(seed);
    return StudentTeacherPair::init(MlpSpec::uniform({4, 6, 6}, false), MlpSpec::uniform({6, 6, 3}, true),
                                    MlpSpec::uniform({3, 3, 3}, true), rng, AlphaSemantics::weight_on_batch);
}

void set_identity(Mlp& m) {
    for (auto& l : m.layers) {
        auto w = l.weight.mutable_values();
        std::fill(w.begin(), w.end(), 0.0);
        const std::size_t in = l.weight.rows(), out = l.weight.cols();
        for (std::size_t i = 0; i < std::min(in, out); ++i) w[i * out + i] = 1.0;
    }
}

}  // namespace

TEST(MlpSpec, Uniform) {
    const auto s = MlpSpec::uniform({4, 5, 2}, true);
    EXPECT_EQ(s.layers(), 2u);
    EXPECT_EQ(s.use_bn, (std::vector<bool>{true, false}));
    EXPECT_EQ(s.use_relu, (std::vector<bool>{true, false}));
}

TEST(Forward, ZeroWeightsGiveZeroPrediction) {
    StudentTeacherPair pair = tiny_pair();
    for (auto* m : {&pair.student_encoder, &pair.student_projector, &pair.student_predictor})
        for (auto& l : m->layers)
            for (double& w : l.weight.mutable_values()) w = 0.0;
    const auto out = forward_student(pair, batch(1, 8, 4), WorkerLayout(8, 2));
    for (double v : out.prediction.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdentityLayerWithoutBn) {
    MlpSpec spec{{3, 3}, {false}, {false}};
    Rng rng(0);
    Mlp m = Mlp::init(spec, rng, true);
    set_identity(m);
    const Tensor x = batch(2, 4, 3);
    const Tensor y = mlp_forward_student(m, x, WorkerLayout(4, 1), StudentNorm::plain);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Forward, MatchesScriptedReference) {
    // 2-layer MLP with BN+ReLU then linear, W=1, recomputed by hand
    Rng rng(0);
    const Mlp m = Mlp::init(MlpSpec::uniform({3, 4, 2}, true), rng, true);
    const Tensor x = batch(0, 6, 3);
    const Tensor y = mlp_forward_student(m, x, WorkerLayout(6, 1), StudentNorm::plain);

    const auto& l0 = m.layers[0];
    const auto& l1 = m.layers[1];
    std::vector<double> h(6 * 4);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t j = 0; j < 4; ++j) {
            double s = l0.bias.at(j);
            for (std::size_t i = 0; i < 3; ++i) s += x.at(r, i) * l0.weight.at(i, j);
            h[r * 4 + j] = s;
        }
    for (std::size_t j = 0; j < 4; ++j) {
        double mu = 0, var = 0;
        for (std::size_t r = 0; r < 6; ++r) mu += h[r * 4 + j] / 6;
        for (std::size_t r = 0; r < 6; ++r) var += (h[r * 4 + j] - mu) * (h[r * 4 + j] - mu) / 6;
        for (std::size_t r = 0; r < 6; ++r) {
            const double n = (h[r * 4 + j] - mu) / std::sqrt(var + 1e-5) * l0.norm->gamma.at(j) + l0.norm->beta.at(j);
            h[r * 4 + j] = std::max(n, 0.0);
        }
    }
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t j = 0; j < 2; ++j) {
            double s = l1.bias.at(j);
            for (std::size_t i = 0; i < 4; ++i) s += h[r * 4 + i] * l1.weight.at(i, j);
            EXPECT_NEAR(y.at(r, j), s, 1e-12);
        }
}

TEST(Forward, WidthMismatch) {
    StudentTeacherPair pair = tiny_pair();
    EXPECT_THROW(forward_student(pair, batch(1, 8, 5), WorkerLayout(8, 2)), DimensionError);
}

TEST(Teacher, StartsAsCopyWithoutGrad) {
    StudentTeacherPair pair = tiny_pair();
    EXPECT_FALSE(pair.teacher_has_grad());
    const auto s = pair.student_parameters();
    const auto t = pair.teacher_parameters();
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_FALSE(t[i].tensor.same_node(s[i].tensor));
        for (std::size_t j = 0; j < t[i].tensor.numel(); ++j) EXPECT_EQ(t[i].tensor.at(j), s[i].tensor.at(j));
    }
}

TEST(Teacher, CopyWithAlphaOneMatchesStudentProjection) {
    StudentTeacherPair pair = tiny_pair(3);
    const Tensor v = batch(4, 8, 4);
    const WorkerLayout one(8, 1);
    const auto s = forward_student(pair, v, one);
    TeacherForwardOptions o;
    o.alpha = 1.0;
    const Tensor z = forward_teacher(pair, v, one, o);
    for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_NEAR(z.at(i), s.projection.at(i), 1e-13);
}

TEST(Teacher, AlphaZeroIsPerSample) {
    StudentTeacherPair pair = tiny_pair(5);
    for (auto* st : pair.teacher_bn_states()) {
        st->hist_mean.assign(st->channels(), 0.1);
        st->hist_var.assign(st->channels(), 0.9);
        st->initialized = true;
    }
    TeacherForwardOptions o;
    o.alpha = 0.0;
    Tensor a = batch(6, 8, 4), b = batch(7, 8, 4);
    {
        auto bv = b.mutable_values();
        for (std::size_t j = 0; j < 4; ++j) bv[j] = a.at(0, j);
    }
    const Tensor za = forward_teacher(pair, a, WorkerLayout(8, 2), o);
    const Tensor zb = forward_teacher(pair, b, WorkerLayout(8, 2), o);
    for (std::size_t j = 0; j < za.cols(); ++j) EXPECT_EQ(za.at(0, j), zb.at(0, j));
}

TEST(Teacher, ForwardStagesWithoutTouchingHistory) {
    StudentTeacherPair pair = tiny_pair();
    TeacherForwardOptions o;
    o.alpha = 0.5;
    forward_teacher(pair, batch(1, 8, 4), WorkerLayout(8, 2), o);
    for (const auto* st : pair.teacher_bn_states()) {
        EXPECT_FALSE(st->initialized);
        EXPECT_EQ(st->pending.size(), 1u);
    }
    EXPECT_GT(commit_teacher_bn(pair, 0.5), 0.0);
    for (const auto* st : pair.teacher_bn_states()) {
        EXPECT_TRUE(st->initialized);
        EXPECT_TRUE(st->pending.empty());
    }
}

TEST(Ema, Endpoints) {
    StudentTeacherPair pair = tiny_pair();
    for (auto p : pair.student_parameters())
        for (double& w : p.tensor.mutable_values()) w += 1.0;
    StudentTeacherPair still = pair;
    ema_update(still, 0.0);
    for (std::size_t i = 0; i < still.teacher_parameters().size(); ++i)
        for (std::size_t j = 0; j < still.teacher_parameters()[i].tensor.numel(); ++j)
            EXPECT_NE(still.teacher_parameters()[i].tensor.at(j), still.student_parameters()[i].tensor.at(j));
    ema_update(pair, 1.0);
    const auto s = pair.student_parameters();
    const auto t = pair.teacher_parameters();
    for (std::size_t i = 0; i < t.size(); ++i)
        for (std::size_t j = 0; j < t[i].tensor.numel(); ++j) EXPECT_EQ(t[i].tensor.at(j), s[i].tensor.at(j));
}

TEST(Ema, Midpoint) {
    StudentTeacherPair pair = tiny_pair();
    for (auto p : pair.teacher_parameters()) std::fill(p.tensor.mutable_values().begin(), p.tensor.mutable_values().end(), 0.0);
    for (auto p : pair.student_parameters()) std::fill(p.tensor.mutable_values().begin(), p.tensor.mutable_values().end(), 2.0);
    ema_update(pair, 0.5);
    for (const auto& p : pair.teacher_parameters())
        for (double v : p.tensor.values()) EXPECT_EQ(v, 1.0);
}

TEST(Ema, RejectsOutOfRange) {
    StudentTeacherPair pair = tiny_pair();
    EXPECT_THROW(ema_update(pair, 1.5), ValueError);
    EXPECT_THROW(ema_update(pair, -0.5), ValueError);
}

TEST(Checkpoint, RoundTrip) {
    StudentTeacherPair pair = tiny_pair(9);
    for (auto* st : pair.teacher_bn_states()) {
        st->hist_mean.assign(st->channels(), 0.25);
        st->hist_var.assign(st->channels(), 1.5);
        st->initialized = true;
    }
    const Checkpoint ck = dump_teacher(pair);
    const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
    EXPECT_EQ(back.arrays, ck.arrays);
    EXPECT_EQ(back.encoder, ck.encoder);
    std::vector<std::string> names;
    for (const auto& a : ck.arrays) names.push_back(a.name);
    EXPECT_EQ(names, expected_array_names(ck.encoder));
}

TEST(Checkpoint, UnknownVersion) {
    auto bytes = encode_checkpoint(dump_teacher(tiny_pair()));
    bytes[8] = 99;
    EXPECT_THROW(decode_checkpoint(bytes), VersionError);
}

TEST(Checkpoint, BadMagicAndTruncation) {
    auto bytes = encode_checkpoint(dump_teacher(tiny_pair()));
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
    bytes.resize(bytes.size() - 5);
    EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, EncoderRebuildsInferenceForward) {
    StudentTeacherPair pair = tiny_pair(2);
    for (auto* st : pair.teacher_bn_states()) {
        st->hist_mean.assign(st->channels(), -0.2);
        st->hist_var.assign(st->channels(), 0.7);
        st->initialized = true;
    }
    const Mlp enc = encoder_from_checkpoint(dump_teacher(pair));
    const Tensor x = batch(3, 5, 4);
    const Tensor a = mlp_forward_inference(enc, x);
    const Tensor b = mlp_forward_inference(pair.teacher_encoder, x);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
}
