#include <cmath>

#include <gtest/gtest.h>

#include "m2t/errors.h"
#include "m2t/objectives.h"

using namespace m2t;

namespace {

Tensor batch(std::uint64_t seed, std::size_t n, std::size_t c) {
    Rng rng(seed);
    std::vector<double> v(n * c);
    for (double& x : v) x = rng.uniform(-2, 2);
    return Tensor::from({n, c}, v);
}

NegQueue queue_of(std::vector<std::vector<double>> keys) {
    NegQueue q(keys.size());
    for (auto& k : keys) q.enqueue(Tensor::from({1, k.size()}, k));
    return q;
}

}  // namespace

TEST(ByolLoss, Aligned) { EXPECT_NEAR(byol_loss(Tensor::matrix({{1, 2}}), Tensor::matrix({{2, 4}})).item(), 0.0, 1e-15); }

TEST(ByolLoss, Antipodal) { EXPECT_NEAR(byol_loss(Tensor::matrix({{1, 2}}), Tensor::matrix({{-1, -2}})).item(), 4.0, 1e-15); }

TEST(ByolLoss, Orthogonal) { EXPECT_NEAR(byol_loss(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 3}})).item(), 2.0, 1e-15); }

TEST(ByolLoss, ScaleInvariantAndBounded) {
    const Tensor p = batch(1, 10, 4), z = batch(2, 10, 4);
    const double base = byol_loss(p, z).item();
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 4.0);
    EXPECT_NEAR(byol_loss(mul_scalar(p, 7.5), z).item(), base, 1e-9);
    EXPECT_NEAR(byol_loss(p, mul_scalar(z, 0.01)).item(), base, 1e-9);
}

TEST(ByolLoss, TargetGetsNoGradient) {
    Tensor p = batch(1, 4, 3).clone(true), z = batch(2, 4, 3).clone(true);
    byol_loss(p, z).backward();
    EXPECT_TRUE(p.has_grad());
    EXPECT_FALSE(z.has_grad());
}

TEST(Symmetrized, PerfectPredictionIsZero) {
    Rng rng(0);
    MlpSpec lin{{3, 3}, {false}, {false}};
    StudentTeacherPair pair = StudentTeacherPair::init(lin, lin, lin, rng, AlphaSemantics::weight_on_batch);
    for (auto& l : pair.student_predictor.layers) {
        auto w = l.weight.mutable_values();
        std::fill(w.begin(), w.end(), 0.0);
        w[0] = w[4] = w[8] = 1.0;
    }
    const Tensor v = batch(5, 4, 3);
    SymmetrizedOptions o;
    const LossValue lv = symmetrized_loss(pair, v, v, WorkerLayout(4, 1), o);
    EXPECT_NEAR(lv.total.item(), 0.0, 1e-14);
    EXPECT_NEAR(lv.l1 + lv.l2, lv.total.item(), 1e-15);
}

TEST(Symmetrized, TeacherViewOrderAndStaging) {
    Rng rng(1);
    StudentTeacherPair pair = StudentTeacherPair::init(MlpSpec::uniform({3, 4, 4}, false), MlpSpec::uniform({4, 4, 2}, true),
                                                       MlpSpec::uniform({2, 2, 2}, true), rng,
                                                       AlphaSemantics::weight_on_batch);
    SymmetrizedOptions o;
    o.teacher.alpha = 0.5;
    TeacherTrace trace;
    o.teacher.trace = &trace;
    symmetrized_loss(pair, batch(1, 8, 3), batch(2, 8, 3), WorkerLayout(8, 2), o);
    ASSERT_FALSE(trace.empty());
    EXPECT_EQ(trace.front().view, 1);
    EXPECT_EQ(trace.back().view, 0);
    for (const auto* st : pair.teacher_bn_states()) EXPECT_EQ(st->pending.size(), 2u);
    EXPECT_FALSE(pair.teacher_has_grad());
}

TEST(InfoNce, UniformSimilarities) {
    NegQueue q = queue_of({{0, 1}, {0, -1}, {0, 1}});
    const double loss = infonce_loss(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1}}), q, 0.5).item();
    EXPECT_NEAR(loss, std::log(4.0), 1e-14);
}

TEST(InfoNce, HandSoftmax) {
    NegQueue q = queue_of({{0, 1}, {0, -1}});
    const double loss = infonce_loss(Tensor::matrix({{1, 0}}), Tensor::matrix({{1, 0}}), q, 1.0).item();
    EXPECT_NEAR(loss, std::log(1 + 2 * std::exp(-1.0)), 1e-14);
    EXPECT_NEAR(loss, 0.5514, 5e-5);
}

TEST(InfoNce, DominantPositive) {
    NegQueue q = queue_of({{0, 1}, {-1, 0}});
    EXPECT_LT(infonce_loss(Tensor::matrix({{1, 0}}), Tensor::matrix({{1, 0}}), q, 0.01).item(), 1e-40);
}

TEST(InfoNce, BadTemperature) {
    NegQueue q = queue_of({{0, 1}});
    EXPECT_THROW(infonce_loss(Tensor::matrix({{1, 0}}), Tensor::matrix({{1, 0}}), q, 0.0), ValueError);
}

TEST(Queue, Fifo) {
    NegQueue q(4);
    for (int i = 1; i <= 6; ++i) queue_update(q, Tensor::matrix({{static_cast<double>(i), 0}}));
    ASSERT_EQ(q.size(), 4u);
    // keys are unit vectors, so tag them by sign pattern instead
    NegQueue r(4);
    for (int i = 1; i <= 6; ++i) queue_update(r, Tensor::matrix({{std::cos(i * 0.3), std::sin(i * 0.3)}}));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r.key(j)[0], std::cos((j + 3) * 0.3), 1e-15);
}

TEST(Queue, EmptyEnqueue) {
    NegQueue q = queue_of({{1, 0}, {0, 1}});
    queue_update(q, Tensor::zeros({0, 2}));
    EXPECT_EQ(q.size(), 2u);
    EXPECT_EQ(q.key(0)[0], 1.0);
}

TEST(Queue, KeysAreUnitNorm) {
    NegQueue q(8);
    queue_update(q, batch(3, 5, 4));
    for (std::size_t i = 0; i < q.size(); ++i) {
        double n = 0;
        for (double v : q.key(i)) n += v * v;
        EXPECT_NEAR(n, 1.0, 1e-14);
    }
}
