// Acceptance run: one PASS/FAIL line per criterion.
//
// Exit status counts failing criteria, except those named with
// --known-unattainable, which still print FAIL but do not fail the run. A
// listed criterion that passes is reported as unexpected and does count.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>

#include "golden.h"
#include "m2t/ablation.h"
#include "m2t/gradcheck_suites.h"
#include "m2t/run_io.h"

using namespace m2t;

namespace {

// tolerances
constexpr double kGradTol = 1e-4;
constexpr std::size_t kGradTrials = 100;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kBnCases = 50;
constexpr std::size_t kLeakIterations = 20;
constexpr std::size_t kEmaCases = 50;
constexpr double kScheduleTol = 1e-12;
constexpr double kGoldenTol = 1e-10;
constexpr int kDeskSeeds = 5;
constexpr int kDeskMinWins = 4;
constexpr double kDeskSeconds = 600.0;
constexpr double kMocoInitRelTol = 0.05;
constexpr double kMocoDropFactor = 0.9;
constexpr int kMocoEpochs = 10;
constexpr double kMocoSeconds = 300.0;

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::filesystem::path source_dir() { return M2T_SOURCE_DIR; }

TrainConfig reference_config() { return load_config(source_dir() / "configs" / "synthetic.json"); }

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(r * c);
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from({r, c}, std::move(v));
}

NormParams random_norm(Rng& rng, std::size_t c) {
    return {random_matrix(rng, 1, c, 0.5, 1.5), random_matrix(rng, 1, c, -0.5, 0.5), 1e-5};
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
               return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
           });
}

Outcome ac1_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    SuiteOptions opt;
    opt.trials = kGradTrials;
    opt.tolerance = kGradTol;
    const auto results = run_gradcheck_suites(opt);
    const double secs = seconds_since(t0);
    double worst = 0.0;
    std::string failing;
    for (const auto& r : results) {
        worst = std::max(worst, r.worst_rel_error);
        if (!r.passed()) failing += " " + r.name;
    }
    const bool ok = failing.empty() && secs < kGradSeconds;
    return {ok, fmt("%zu suites x %zu trials, worst rel err %.2e (tol %.0e), %.1fs (limit %.0fs)%s%s", results.size(),
                    kGradTrials, worst, kGradTol, secs, kGradSeconds, failing.empty() ? "" : ", failing:",
                    failing.c_str())};
}

Outcome ac2_synced_equivalence() {
    Rng rng = Rng::substream(2, "ac2");
    std::size_t mismatches = 0, compared = 0;
    for (std::size_t t = 0; t < kBnCases; ++t) {
        const std::size_t n = 8 * (1 + rng.below(6));
        const std::size_t c = 1 + rng.below(8);
        const Tensor x = random_matrix(rng, n, c);
        const NormParams p = random_norm(rng, c);
        const Tensor single = plain_bn_forward(x, WorkerLayout(n, 1), p);
        for (std::size_t w : {2, 4, 8}) {
            ++compared;
            if (!bit_equal(synced_bn_forward(x, WorkerLayout(n, w), p).values(), single.values())) ++mismatches;
        }
    }
    return {mismatches == 0, fmt("%zu random cases x W in {2,4,8}: %zu/%zu bit-identical to W=1", kBnCases,
                                 compared - mismatches, compared)};
}

Outcome ac3_momentum_degeneracy() {
    Rng rng = Rng::substream(3, "ac3");
    std::size_t alpha1_ok = 0, alpha0_ok = 0;
    for (std::size_t t = 0; t < kBnCases; ++t) {
        const std::size_t n = 2 + rng.below(30), c = 1 + rng.below(8);
        const Tensor x = random_matrix(rng, n, c);
        const NormParams p = random_norm(rng, c);
        MomentumBNState s = MomentumBNState::fresh(c, AlphaSemantics::weight_on_batch);
        for (std::size_t j = 0; j < c; ++j) {
            s.hist_mean[j] = rng.uniform(-1, 1);
            s.hist_var[j] = rng.uniform(0.2, 2);
        }
        s.initialized = true;
        if (bit_equal(momentum_bn_forward(x, s, 1.0, p).output.values(), bn_batch(x, p).values())) ++alpha1_ok;

        // perturb every other row, the chosen row's output must not move
        const std::size_t row = rng.below(n);
        Tensor y = random_matrix(rng, n, c, -50, 50);
        {
            auto yv = y.mutable_values();
            for (std::size_t j = 0; j < c; ++j) yv[row * c + j] = x.at(row, j);
        }
        const Tensor a = momentum_bn_forward(x, s, 0.0, p).output;
        const Tensor b = momentum_bn_forward(y, s, 0.0, p).output;
        if (bit_equal(a.values().subspan(row * c, c), b.values().subspan(row * c, c))) ++alpha0_ok;
    }
    return {alpha1_ok == kBnCases && alpha0_ok == kBnCases,
            fmt("alpha=1 equals plain BN bitwise in %zu/%zu; alpha=0 row unaffected by other rows in %zu/%zu", alpha1_ok,
                kBnCases, alpha0_ok, kBnCases)};
}

TrainConfig small_config(std::uint64_t seed) {
    TrainConfig c;
    c.seed = seed;
    c.batch_size = 16;
    c.workers = 4;
    c.epochs = 1;
    c.warmup_epochs = 0;
    c.dataset.dim = 8;
    c.network.encoder = {8, 16, 16};
    c.network.projector = {16, 16, 8};
    c.network.predictor = {8, 8, 8};
    c.augment.noise_std = 0.1;
    c.augment.mask_prob = 0.1;
    return c;
}

Outcome ac4_leakage() {
    const TrainConfig c = small_config(4);
    TrainState state = TrainState::init(c);
    Schedules sched;
    sched.iterations = 100;
    sched.iterations_per_epoch = 100;
    for (ScheduleSpec* s : {&sched.lr, &sched.m, &sched.alpha}) s->total_steps = 99;
    sched.lr.base = 0.05;
    sched.m.base = c.m_base;
    sched.alpha.base = 0.5;  // strictly between the endpoints so both stats and history matter
    sched.alpha.kind = ScheduleKind::constant;

    Rng rng = Rng::substream(4, "ac4");
    std::size_t identical = 0, sensitive = 0;
    for (std::size_t k = 0; k < kLeakIterations; ++k) {
        const Tensor v = random_matrix(rng, c.batch_size, 8);
        const Tensor v2 = random_matrix(rng, c.batch_size, 8);
        const Tensor v2p = random_matrix(rng, c.batch_size, 8, -10, 10);

        SymmetrizedOptions o;
        o.student_norm = c.student_norm();
        o.teacher.norm = TeacherNorm::momentum;
        o.teacher.alpha = 0.5;
        StudentTeacherPair a = state.pair, b = state.pair;
        const LossValue la = symmetrized_loss(a, v, v2, state.layout(), o);
        const LossValue lb = symmetrized_loss(b, v, v2p, state.layout(), o);
        if (bit_equal(la.teacher_v.values(), lb.teacher_v.values())) ++identical;
        if (!bit_equal(la.teacher_v2.values(), lb.teacher_v2.values())) ++sensitive;

        train_step_views(state, v, v2, sched, static_cast<std::int64_t>(k));
    }
    return {identical == kLeakIterations && sensitive == kLeakIterations,
            fmt("%zu iterations: teacher(v) bit-identical under arbitrary v' in %zu, teacher(v') changed in %zu",
                kLeakIterations, identical, sensitive)};
}

Outcome ac5_ema() {
    Rng rng = Rng::substream(5, "ac5");
    std::size_t copy_ok = 0, still_ok = 0, bound_ok = 0;
    for (std::size_t t = 0; t < kEmaCases; ++t) {
        TrainState s = TrainState::init(small_config(100 + t));
        for (auto p : s.pair.teacher_parameters())
            for (double& w : p.tensor.mutable_values()) w += rng.uniform(-1, 1);
        auto snapshot = [](const std::vector<Mlp::Param>& ps) {
            std::vector<std::vector<double>> out;
            for (const auto& p : ps) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
            return out;
        };
        const auto student = snapshot(s.pair.student_parameters());
        const auto teacher = snapshot(s.pair.teacher_parameters());
        const std::size_t tn = teacher.size();

        StudentTeacherPair p0 = s.pair;
        // fresh teacher tensors so the three variants do not share storage
        auto fresh = [&](StudentTeacherPair& p) {
            for (Mlp* mlp : {&p.teacher_encoder, &p.teacher_projector})
                for (auto& l : mlp->layers) {
                    l.weight = l.weight.clone();
                    l.bias = l.bias.clone();
                    if (l.norm) l.norm = NormParams{l.norm->gamma.clone(), l.norm->beta.clone(), l.norm->eps};
                }
        };
        StudentTeacherPair p1 = s.pair, ph = s.pair;
        fresh(p0);
        fresh(p1);
        fresh(ph);
        ema_update(p1, 1.0);
        ema_update(p0, 0.0);
        const double m = rng.uniform(0.0, 1.0);
        ema_update(ph, m);

        const auto a1 = snapshot(p1.teacher_parameters());
        const auto a0 = snapshot(p0.teacher_parameters());
        const auto ah = snapshot(ph.teacher_parameters());
        bool c1 = true, c0 = true, ch = true;
        for (std::size_t i = 0; i < tn; ++i) {
            c1 = c1 && bit_equal(a1[i], student[i]);
            c0 = c0 && bit_equal(a0[i], teacher[i]);
            for (std::size_t j = 0; j < ah[i].size(); ++j) {
                const double lo = std::min(teacher[i][j], student[i][j]), hi = std::max(teacher[i][j], student[i][j]);
                ch = ch && ah[i][j] >= lo && ah[i][j] <= hi;
            }
        }
        copy_ok += c1;
        still_ok += c0;
        bound_ok += ch;
    }
    return {copy_ok == kEmaCases && still_ok == kEmaCases && bound_ok == kEmaCases,
            fmt("m=1 copies student in %zu/%zu, m=0 leaves teacher in %zu/%zu, random m within bounds in %zu/%zu",
                copy_ok, kEmaCases, still_ok, kEmaCases, bound_ok, kEmaCases)};
}

Outcome ac6_schedules() {
    double worst = 0.0;
    for (double base : {1.0, 0.032, 0.1, 0.3, 2.5})
        for (std::int64_t K : {2, 10, 100, 1000, 9300}) {
            worst = std::max(worst, std::abs(cosine_value(base, 0, K) - base));
            worst = std::max(worst, std::abs(cosine_value(base, K, K) - 0.0));
            worst = std::max(worst, std::abs(cosine_value(base, K / 2, K) - base / 2));
        }
    double scale_worst = 0.0;
    for (double k1 : {0.5, 2.0, 3.0})
        for (double k2 : {0.25, 2.0, 4.0}) {
            const ScaledHyper a = apply_linear_scaling(0.1, 0.01, k1);
            const ScaledHyper ab = apply_linear_scaling(a.lr, a.m_base, k2);
            const ScaledHyper direct = apply_linear_scaling(0.1, 0.01, k1 * k2);
            scale_worst = std::max({scale_worst, std::abs(ab.lr - direct.lr), std::abs(ab.m_base - direct.m_base)});
        }
    return {worst <= kScheduleTol && scale_worst <= kScheduleTol,
            fmt("endpoint/midpoint max error %.1e, scaling composition max error %.1e (tol %.0e)", worst, scale_worst,
                kScheduleTol)};
}

Outcome ac7_golden() {
    const auto cmp = m2t::testing::run_golden_trace(M2T_GOLDEN_TRACE);
    std::string worst_name;
    double worst = -1;
    for (const auto& q : cmp.quantities)
        if (q.max_abs_error > worst) {
            worst = q.max_abs_error;
            worst_name = q.name;
        }
    return {cmp.worst() <= kGoldenTol, fmt("%zu quantities, %zu values, worst abs error %.2e at %s (tol %.0e)",
                                           cmp.quantities.size(), cmp.values_compared(), worst, worst_name.c_str(),
                                           kGoldenTol)};
}

Outcome ac8_desk() {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainConfig base = reference_config();
    double sum_m2t = 0.0, sum_plain = 0.0;
    int wins = 0;
    std::string per_seed;
    for (int s = 0; s < kDeskSeeds; ++s) {
        TrainConfig a = base, b = base;
        a.seed = b.seed = base.seed + static_cast<std::uint64_t>(s);
        a.mode = TrainMode::byol_m2t;
        b.mode = TrainMode::byol_plain;
        const double acc_a = pretrain_and_probe(a).probe_acc;
        const double acc_b = pretrain_and_probe(b).probe_acc;
        sum_m2t += acc_a;
        sum_plain += acc_b;
        wins += acc_a - acc_b > 0;
        per_seed += fmt(" %+.3f", acc_a - acc_b);
    }
    const double secs = seconds_since(t0);
    const double mean_a = sum_m2t / kDeskSeeds, mean_b = sum_plain / kDeskSeeds;
    return {mean_a >= mean_b && wins >= kDeskMinWins && secs < kDeskSeconds,
            fmt("probe acc plain/momentum %.4f vs plain/plain %.4f, per-seed diff%s, positive in %d/%d, %.0fs (limit "
                "%.0fs)",
                mean_a, mean_b, per_seed.c_str(), wins, kDeskSeeds, secs, kDeskSeconds)};
}

Outcome ac9_moco() {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig c = reference_config();
    c.mode = TrainMode::moco;
    c.epochs = kMocoEpochs;
    const double target = std::log(1.0 + static_cast<double>(c.moco.queue_size));
    bool ok = true;
    std::string detail;
    for (TeacherNorm t : {TeacherNorm::shuffling, TeacherNorm::momentum}) {
        c.moco.teacher_bn = t;
        const auto [train, test] = load_dataset(c);
        const TrainResult r = run_training(c, train);
        const double init = r.metrics.front().loss;
        double last = 0.0;
        int n = 0;
        for (const auto& m : r.metrics)
            if (m.epoch == kMocoEpochs - 1) {
                last += m.loss;
                ++n;
            }
        last /= n;
        const bool init_ok = std::abs(init - target) <= kMocoInitRelTol * target;
        const bool drop_ok = last < kMocoDropFactor * init;
        ok = ok && init_ok && drop_ok;
        detail += fmt("%s teacher: init %.3f vs ln(1+K)=%.3f (%s), last-epoch mean %.3f = %.2fx init (%s); ",
                      to_string(t).c_str(), init, target, init_ok ? "ok" : "off", last, last / init,
                      drop_ok ? "ok" : "no drop");
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < kMocoSeconds;
    return {ok, detail + fmt("%.0fs (limit %.0fs)", secs, kMocoSeconds)};
}

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome ac10_determinism() {
    const TrainConfig c = reference_config();
    const auto root = std::filesystem::temp_directory_path() / ("m2t_ac10_" + std::to_string(::getpid()));
    std::filesystem::remove_all(root);
    pretrain_to_dir(c, root / "a");
    pretrain_to_dir(c, root / "b");
    const auto ma = slurp(run_paths(root / "a").metrics), mb = slurp(run_paths(root / "b").metrics);
    const auto ca = slurp(run_paths(root / "a").checkpoint), cb = slurp(run_paths(root / "b").checkpoint);
    std::filesystem::remove_all(root);
    const bool ok = !ma.empty() && !ca.empty() && ma == mb && ca == cb;
    return {ok, fmt("metrics.csv %zu bytes %s, checkpoint.bin %zu bytes %s", ma.size(), ma == mb ? "identical" : "DIFFER",
                    ca.size(), ca == cb ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> known;
    std::vector<int> only;
    app.add_option("--known-unattainable", known, "criteria expected to fail (documented)");
    app.add_option("--only", only, "run a subset");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient oracle", ac1_gradients},
        {"synced BN equivalence", ac2_synced_equivalence},
        {"momentum BN degeneracy", ac3_momentum_degeneracy},
        {"leakage freedom", ac4_leakage},
        {"EMA contract", ac5_ema},
        {"schedule endpoints", ac6_schedules},
        {"golden trace", ac7_golden},
        {"desk-scale directional", ac8_desk},
        {"MoCo smoke", ac9_moco},
        {"determinism", ac10_determinism},
    };
    const std::set<int> expected_fail(known.begin(), known.end());
    int failures = 0, passed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const bool known_bad = expected_fail.count(id) > 0;
        std::string tag = o.passed ? "PASS" : "FAIL";
        if (!o.passed && known_bad) tag += " (known, documented)";
        if (o.passed && known_bad) tag += " (unexpected pass)";
        std::printf("%-4s AC%-2d %-24s %s\n", tag.c_str(), id, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
        passed += o.passed;
        if (o.passed == known_bad) ++failures;
    }
    std::printf("%d criteria passed, %d unexpected result(s)\n", passed, failures);
    return failures == 0 ? 0 : 1;
}
