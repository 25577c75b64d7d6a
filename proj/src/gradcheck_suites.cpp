#include "m2t/gradcheck_suites.h"

#include <algorithm>
#include <cmath>
#include <functional>

#include "m2t/gradcheck.h"
#include "m2t/objectives.h"

namespace m2t {

namespace {

struct Case {
    std::function<Tensor()> f;
    std::vector<NamedTensor> params;
};

using Builder = std::function<Case(Rng&)>;

Tensor rand_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), true);
}

// away from 0, for relu kinks and divisors
Tensor rand_away_from_zero(Rng& rng, Shape shape, double gap) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        do x = rng.uniform(-2.0, 2.0);
        while (std::abs(x) < gap);
    }
    return Tensor::from(std::move(shape), std::move(v), true);
}

// sum(out * R): every output element gets its own random weight
Tensor project(const Tensor& out, const Tensor& r) { return sum_all(mul(out, r)); }

Tensor rand_const(Rng& rng, const Shape& s) {
    std::vector<double> v(shape_numel(s));
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    return Tensor::from(s, std::move(v));
}

Builder unary(std::function<Tensor(const Tensor&)> op, double lo = -2.0, double hi = 2.0) {
    return [op, lo, hi](Rng& rng) {
        Tensor x = rand_tensor(rng, {3, 4}, lo, hi);
        Tensor r = rand_const(rng, {3, 4});
        return Case{[=] { return project(op(x), r); }, {{"x", x}}};
    };
}

Builder binary(std::function<Tensor(const Tensor&, const Tensor&)> op, Shape sa, Shape sb, Shape so) {
    return [=](Rng& rng) {
        Tensor a = rand_tensor(rng, sa);
        Tensor b = rand_tensor(rng, sb);
        Tensor r = rand_const(rng, so);
        return Case{[=] { return project(op(a, b), r); }, {{"a", a}, {"b", b}}};
    };
}

Builder reduction(std::function<Tensor(const Tensor&)> op, Shape so) {
    return [=](Rng& rng) {
        Tensor x = rand_tensor(rng, {4, 3});
        Tensor r = rand_const(rng, so);
        return Case{[=] { return project(op(x), r); }, {{"x", x}}};
    };
}

Builder bn_case(std::function<Tensor(const Tensor&, const NormParams&)> op) {
    return [op](Rng& rng) {
        Tensor x = rand_tensor(rng, {4, 3});
        NormParams p{rand_tensor(rng, {1, 3}), rand_tensor(rng, {1, 3}), 1e-5};
        Tensor r = rand_const(rng, {4, 3});
        return Case{[=] { return project(op(x, p), r); }, {{"x", x}, {"gamma", p.gamma}, {"beta", p.beta}}};
    };
}

// Small pair; gradients w.r.t. every student parameter of the symmetrized loss.
Case byol_case(Rng& rng, StudentNorm sn, TeacherNorm tn) {
    auto pair = std::make_shared<StudentTeacherPair>(StudentTeacherPair::init(
        MlpSpec::uniform({3, 5, 5}, false), MlpSpec::uniform({5, 5, 4}, true), MlpSpec::uniform({4, 4, 4}, true), rng,
        AlphaSemantics::weight_on_batch));
    // student and teacher differ, as they do after a few iterations. Nonzero
    // biases also keep a row with all ReLUs dead away from p = 0, where the
    // row normalization is singular.
    {
        Rng jitter(rng.next_u64());
        for (auto& p : pair->student_parameters())
            for (double& w : p.tensor.mutable_values()) w += jitter.uniform(-0.3, 0.3);
        for (auto& p : pair->teacher_parameters())
            for (double& w : p.tensor.mutable_values()) w += jitter.uniform(-0.3, 0.3);
        for (auto* s : pair->teacher_bn_states()) {
            s->hist_mean.assign(s->channels(), 0.0);
            for (double& m : s->hist_mean) m = jitter.uniform(-0.5, 0.5);
            s->hist_var.assign(s->channels(), 0.0);
            for (double& v : s->hist_var) v = jitter.uniform(0.5, 1.5);
            s->initialized = true;
        }
    }
    const Tensor v = rand_tensor(rng, {8, 3}).detach();
    const Tensor v2 = rand_tensor(rng, {8, 3}).detach();
    const std::uint64_t seed = rng.next_u64();
    std::vector<NamedTensor> params;
    for (const auto& p : pair->student_parameters()) params.push_back({p.name, p.tensor});
    auto f = [=] {
        SymmetrizedOptions o;
        o.student_norm = sn;
        o.teacher.norm = tn;
        o.teacher.alpha = 0.3;
        o.teacher.shuffle_seed = seed;
        const LossValue lv = symmetrized_loss(*pair, v, v2, WorkerLayout(8, 2), o);
        for (auto* s : pair->teacher_bn_states()) s->pending.clear();
        return lv.total;
    };
    return {f, params};
}

struct Suite {
    std::string name;
    Builder build;
};

std::vector<Suite> suites(bool inject_faulty) {
    std::vector<Suite> s{
        {"matmul", binary(matmul, {3, 4}, {4, 2}, {3, 2})},
        {"transpose", reduction(transpose, {3, 4})},
        {"add", binary(add, {3, 4}, {3, 4}, {3, 4})},
        {"add_broadcast", binary(add, {3, 4}, {1, 4}, {3, 4})},
        {"sub", binary(sub, {3, 4}, {3, 1}, {3, 4})},
        {"mul", binary(mul, {3, 4}, {1, 4}, {3, 4})},
        {"div",
         [](Rng& rng) {
             Tensor a = rand_tensor(rng, {3, 4});
             Tensor b = rand_away_from_zero(rng, {3, 4}, 0.3);
             Tensor r = rand_const(rng, {3, 4});
             return Case{[=] { return project(div(a, b), r); }, {{"a", a}, {"b", b}}};
         }},
        {"relu",
         [](Rng& rng) {
             Tensor x = rand_away_from_zero(rng, {3, 4}, 1e-3);
             Tensor r = rand_const(rng, {3, 4});
             return Case{[=] { return project(relu(x), r); }, {{"x", x}}};
         }},
        {"sqrt", unary([](const Tensor& x) { return sqrt(x); }, 0.1, 2.0)},
        {"exp", unary([](const Tensor& x) { return exp(x); })},
        {"log", unary([](const Tensor& x) { return log(x); }, 0.1, 2.0)},
        {"neg", unary(neg)},
        {"add_scalar", unary([](const Tensor& x) { return add_scalar(x, 0.7); })},
        {"mul_scalar", unary([](const Tensor& x) { return mul_scalar(x, -1.3); })},
        {"sum_axis0", reduction([](const Tensor& x) { return sum(x, 0); }, {1, 3})},
        {"sum_axis1", reduction([](const Tensor& x) { return sum(x, 1); }, {4, 1})},
        {"mean_axis0", reduction([](const Tensor& x) { return mean(x, 0); }, {1, 3})},
        {"var_axis0", reduction([](const Tensor& x) { return var(x, 0); }, {1, 3})},
        {"var_axis1", reduction([](const Tensor& x) { return var(x, 1); }, {4, 1})},
        {"sum_all", reduction(sum_all, {1})},
        {"mean_all", reduction(mean_all, {1})},
        {"gather_rows", reduction(
                            [](const Tensor& x) {
                                const std::vector<std::size_t> idx{2, 0, 2, 3, 1};
                                return gather_rows(x, idx);
                            },
                            {5, 3})},
        {"slice_rows", reduction([](const Tensor& x) { return slice_rows(x, 1, 3); }, {2, 3})},
        {"concat_rows", binary(
                            [](const Tensor& a, const Tensor& b) {
                                const std::vector<Tensor> parts{a, b, a};
                                return concat_rows(parts);
                            },
                            {2, 3}, {1, 3}, {5, 3})},
        {"l2_normalize_rows", reduction([](const Tensor& x) { return l2_normalize_rows(x); }, {4, 3})},
        {"logsumexp_rows", reduction(logsumexp_rows, {4, 1})},
        {"bn_batch", bn_case(bn_batch)},
        {"plain_bn_forward",
         bn_case([](const Tensor& x, const NormParams& p) { return plain_bn_forward(x, WorkerLayout(4, 2), p); })},
        {"synced_bn_forward",
         bn_case([](const Tensor& x, const NormParams& p) { return synced_bn_forward(x, WorkerLayout(4, 2), p); })},
        {"shuffling_bn_forward",
         bn_case([](const Tensor& x, const NormParams& p) {
             return shuffling_bn_forward(x, WorkerLayout(4, 2), p, 11);
         })},
        {"bn_apply", bn_case([](const Tensor& x, const NormParams& p) {
             return bn_apply(x, BatchStats{{0.1, -0.2, 0.3}, {0.5, 1.5, 0.8}, 4}, p);
         })},
        {"byol_loss",
         [](Rng& rng) {
             Tensor p = rand_tensor(rng, {4, 3});
             Tensor z = rand_tensor(rng, {4, 3}).detach();
             return Case{[=] { return byol_loss(p, z); }, {{"p", p}}};
         }},
        {"byol_symmetrized_plain_momentum",
         [](Rng& rng) { return byol_case(rng, StudentNorm::plain, TeacherNorm::momentum); }},
        {"byol_symmetrized_synced_synced",
         [](Rng& rng) { return byol_case(rng, StudentNorm::synced, TeacherNorm::synced); }},
        {"infonce",
         [](Rng& rng) {
             auto queue = std::make_shared<NegQueue>(6);
             queue->fill_random(3, rng);
             Tensor q = rand_tensor(rng, {4, 3});
             Tensor k = rand_tensor(rng, {4, 3}).detach();
             return Case{[=] { return infonce_loss(q, k, *queue, 0.2); }, {{"q", q}}};
         }},
    };
    if (inject_faulty) {
        s.push_back({"faulty_square", [](Rng& rng) {
                         Tensor x = rand_tensor(rng, {3, 4});
                         Tensor r = rand_const(rng, {3, 4});
                         auto square = [](const Tensor& a) {
                             std::vector<double> v(a.values().begin(), a.values().end());
                             for (double& e : v) e *= e;
                             return make_op("faulty_square", a.shape(), std::move(v), {a},
                                            [](const detail::Node& self, std::span<std::vector<double>*> g) {
                                                if (!g[0]) return;
                                                const auto& xv = self.parents[0]->values;
                                                // wrong on purpose: d(x^2)/dx taken as x
                                                for (std::size_t i = 0; i < xv.size(); ++i)
                                                    (*g[0])[i] += self.grad[i] * xv[i];
                                            });
                         };
                         return Case{[=] { return project(square(x), r); }, {{"x", x}}};
                     }});
    }
    return s;
}

}  // namespace

std::vector<std::string> gradcheck_suite_names(bool inject_faulty) {
    std::vector<std::string> names;
    for (const auto& s : suites(inject_faulty)) names.push_back(s.name);
    return names;
}

std::vector<SuiteResult> run_gradcheck_suites(const SuiteOptions& opt) {
    std::vector<SuiteResult> out;
    for (const auto& suite : suites(opt.inject_faulty)) {
        Rng rng = Rng::substream(opt.seed, suite.name);
        SuiteResult res;
        res.name = suite.name;
        for (std::size_t t = 0; t < opt.trials; ++t) {
            Case c = suite.build(rng);
            const GradCheckReport rep = finite_diff_check(c.f, c.params, 1e-5, opt.tolerance);
            res.trials++;
            if (!rep.passed()) res.failed_trials++;
            res.worst_rel_error = std::max(res.worst_rel_error, rep.max_rel_error());
            for (const auto& b : rep.blocks) res.nan_count += b.nan_count;
        }
        out.push_back(std::move(res));
    }
    return out;
}

}  // namespace m2t
