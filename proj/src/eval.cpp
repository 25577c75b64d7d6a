#include "m2t/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "m2t/errors.h"
#include "m2t/optim.h"
#include "m2t/schedules.h"

namespace m2t {

std::size_t worker_threads() {
    const char* env = std::getenv("M2T_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) throw ConfigError("M2T_THREADS", std::string("expected a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(n);
}

Dataset extract_features(const Mlp& encoder, const Dataset& d) {
    if (encoder.spec.input_width() != d.dim) {
        throw DimensionError("encoder expects " + std::to_string(encoder.spec.input_width()) +
                             " input features, dataset has " + std::to_string(d.dim));
    }
    Dataset out;
    out.rows = d.rows;
    out.dim = encoder.spec.output_width();
    out.labels = d.labels;
    out.num_classes = d.num_classes;
    out.source = d.source;
    out.samples.assign(out.rows * out.dim, 0.0);
    if (d.rows == 0) return out;

    // rows are independent under history-only BN, so any split gives the same bits
    const std::size_t threads = std::min(worker_threads(), d.rows);
    const std::size_t chunk = (d.rows + threads - 1) / threads;
    auto work = [&](std::size_t begin, std::size_t end) {
        std::vector<std::size_t> idx(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const Tensor f = mlp_forward_inference(encoder, d.batch(idx));
        std::copy(f.values().begin(), f.values().end(), out.samples.begin() + begin * out.dim);
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) {
        const std::size_t b = t * chunk, e = std::min(d.rows, b + chunk);
        if (b < e) pool.emplace_back(work, b, e);
    }
    work(0, std::min(d.rows, chunk));
    for (auto& th : pool) th.join();
    return out;
}

Dataset extract_features(const Checkpoint& ck, const Dataset& d) {
    return extract_features(encoder_from_checkpoint(ck), d);
}

namespace {

struct ProbeHead {
    BatchStats stats;
    NormParams norm;
    Tensor weight;  // [C_in x classes]
    Tensor bias;

    Tensor forward(const Tensor& x) const { return add(matmul(bn_apply(x, stats, norm), weight), bias); }
};

std::vector<int> argmax_rows(const Tensor& logits) {
    std::vector<int> out(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        out[r] = static_cast<int>(best);
    }
    return out;
}

double accuracy(const ProbeHead& head, const Dataset& d) {
    if (d.rows == 0) return 0.0;
    NoGradGuard guard;
    std::vector<std::size_t> idx(d.rows);
    std::iota(idx.begin(), idx.end(), 0);
    const auto pred = argmax_rows(head.forward(d.batch(idx)));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < d.rows; ++i) hit += pred[i] == d.labels[i];
    return static_cast<double>(hit) / static_cast<double>(d.rows);
}

}  // namespace

ProbeResult linear_probe(const Dataset& train, const Dataset& test, const ProbeSpec& spec, std::uint64_t seed) {
    if (train.rows == 0) throw ValueError("linear probe needs training rows");
    if (train.labels.size() != train.rows || test.labels.size() != test.rows) {
        throw DimensionError("linear probe needs one label per row");
    }
    if (train.dim != test.dim) throw DimensionError("train and test features differ in width");
    for (double v : train.samples)
        if (!std::isfinite(v)) throw ValueError("non-finite feature value");
    const auto [lo, hi] = std::minmax_element(train.labels.begin(), train.labels.end());
    if (*lo == *hi) throw ValueError("linear probe needs at least two classes in the training labels");
    if (spec.epochs < 0 || spec.batch_size == 0) throw ValueError("probe epochs must be >= 0 and batch_size > 0");

    const std::size_t classes = static_cast<std::size_t>(std::max(train.num_classes, *hi + 1));
    std::vector<std::size_t> all(train.rows);
    std::iota(all.begin(), all.end(), 0);

    ProbeHead head;
    head.stats = batch_stats(train.batch(all));
    head.norm = NormParams::identity(train.dim, true);
    head.weight = Tensor::zeros({train.dim, classes}, true);
    head.bias = Tensor::zeros({1, classes}, true);

    std::vector<Mlp::Param> params{{"probe.bn.gamma", head.norm.gamma, true},
                                   {"probe.bn.beta", head.norm.beta, true},
                                   {"probe.weight", head.weight, false},
                                   {"probe.bias", head.bias, true}};
    OptimizerHyper hyper;
    hyper.weight_decay = 0.0;
    OptimizerState opt(params, hyper);

    const std::size_t bs = std::min(spec.batch_size, train.rows);
    const std::size_t per_epoch = train.rows / bs;
    const std::int64_t T = static_cast<std::int64_t>(per_epoch) * spec.epochs;
    ScheduleSpec lr;
    lr.base = spec.lr;
    lr.total_steps = std::max<std::int64_t>(T - 1, 1);

    Rng rng = Rng::substream(seed, "probe");
    ProbeResult res;
    std::int64_t k = 0;
    for (int e = 0; e < spec.epochs; ++e) {
        const auto order = rng.permutation(train.rows);
        for (std::size_t b = 0; b < per_epoch; ++b, ++k) {
            const std::span<const std::size_t> idx(order.data() + b * bs, bs);
            std::vector<double> onehot(bs * classes, 0.0);
            for (std::size_t i = 0; i < bs; ++i) onehot[i * classes + train.labels[idx[i]]] = 1.0;
            const Tensor logits = head.forward(train.batch(idx));
            const Tensor picked = sum(mul(logits, Tensor::from({bs, classes}, std::move(onehot))), 1);
            const Tensor loss = mean_all(sub(logsumexp_rows(logits), picked));
            opt.zero_grad();
            loss.backward();
            sgd_step(opt, schedule_value(lr, k));
            res.final_loss = loss.item();
        }
    }
    res.train_acc = accuracy(head, train);
    res.test_acc = accuracy(head, test);
    return res;
}

std::vector<int> knn_predict(const Dataset& train, const Dataset& test, std::size_t k) {
    if (k == 0) throw ValueError("k must be >= 1");
    if (k > train.rows) {
        throw ValueError("k = " + std::to_string(k) + " exceeds the training set size " + std::to_string(train.rows));
    }
    if (train.dim != test.dim) throw DimensionError("train and test features differ in width");
    if (train.labels.size() != train.rows) throw DimensionError("knn needs one label per training row");

    auto unit = [](const Dataset& d) {
        std::vector<double> u(d.samples);
        for (std::size_t r = 0; r < d.rows; ++r) {
            double n2 = 0.0;
            for (std::size_t c = 0; c < d.dim; ++c) n2 += u[r * d.dim + c] * u[r * d.dim + c];
            const double n = std::max(std::sqrt(n2), 1e-12);
            for (std::size_t c = 0; c < d.dim; ++c) u[r * d.dim + c] /= n;
        }
        return u;
    };
    const auto a = unit(train);
    const auto b = unit(test);
    int classes = train.num_classes;
    for (int l : train.labels) classes = std::max(classes, l + 1);

    std::vector<int> pred(test.rows);
    std::vector<double> sim(train.rows);
    std::vector<std::size_t> order(train.rows);
    for (std::size_t t = 0; t < test.rows; ++t) {
        for (std::size_t i = 0; i < train.rows; ++i) {
            double s = 0.0;
            for (std::size_t c = 0; c < train.dim; ++c) s += b[t * train.dim + c] * a[i * train.dim + c];
            sim[i] = s;
        }
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t x, std::size_t y) { return sim[x] > sim[y] || (sim[x] == sim[y] && x < y); });
        std::vector<std::size_t> votes(static_cast<std::size_t>(classes), 0);
        for (std::size_t j = 0; j < k; ++j) votes[static_cast<std::size_t>(train.labels[order[j]])]++;
        pred[t] = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
    return pred;
}

double knn_eval(const Dataset& train, const Dataset& test, std::size_t k) {
    const auto pred = knn_predict(train, test, k);
    if (test.rows == 0) return 0.0;
    if (test.labels.size() != test.rows) throw DimensionError("knn needs one label per test row");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < test.rows; ++i) hit += pred[i] == test.labels[i];
    return static_cast<double>(hit) / static_cast<double>(test.rows);
}

}  // namespace m2t
