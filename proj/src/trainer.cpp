#include "m2t/trainer.h"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "m2t/errors.h"
#include "m2t/health.h"

namespace m2t {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<Mlp::Param> trainable_parameters(const StudentTeacherPair& pair, TrainMode mode) {
    if (mode != TrainMode::moco) return pair.student_parameters();
    // MoCo has no predictor on the query branch.
    auto out = pair.student_encoder.parameters("encoder");
    for (auto& p : pair.student_projector.parameters("projector")) out.push_back(std::move(p));
    return out;
}

}  // namespace

std::string metrics_csv_row(const MetricsRecord& r) {
    std::string s = std::to_string(r.iteration) + "," + std::to_string(r.epoch);
    for (double v : {r.loss, r.l1, r.l2, r.lr, r.m, r.alpha, r.hist_drift, r.sec_per_iter}) s += "," + fmt_double(v);
    return s;
}

Schedules make_schedules(const TrainConfig& c, std::size_t train_rows) {
    Schedules s;
    s.iterations_per_epoch = static_cast<std::int64_t>(train_rows / c.batch_size);
    if (c.epochs > 0 && s.iterations_per_epoch == 0) {
        throw ConfigError("batch_size", "larger than the training split (" + std::to_string(train_rows) + " rows)");
    }
    s.iterations = s.iterations_per_epoch * c.epochs;
    const std::int64_t K = std::max<std::int64_t>(s.iterations - 1, 1);

    s.lr.base = c.lr_base * static_cast<double>(c.batch_size) / static_cast<double>(c.reference_batch);
    s.lr.total_steps = K;
    s.lr.warmup_steps = std::min<std::int64_t>(c.warmup_epochs * s.iterations_per_epoch, K - 1);
    s.lr.warmup_factor = c.warmup_factor;
    s.lr.validate();

    s.m.total_steps = K;
    s.alpha.total_steps = K;
    if (c.mode == TrainMode::moco) {
        s.m.base = c.moco.m;
        s.m.kind = ScheduleKind::constant;
        s.alpha.base = c.moco.alpha;
        s.alpha.kind = ScheduleKind::constant;
    } else {
        s.m.base = c.m_base;
        s.alpha.base = c.alpha_base;
    }
    return s;
}

StepValues step_values(const Schedules& s, std::int64_t k) {
    return {lr_at(s.lr, k), schedule_value(s.m, k), schedule_value(s.alpha, k)};
}

TrainState TrainState::init(const TrainConfig& c) {
    c.validate();
    Rng init_rng = Rng::substream(c.seed, "init");
    StudentTeacherPair pair =
        StudentTeacherPair::init(c.network.encoder_spec(), c.network.projector_spec(), c.network.predictor_spec(),
                                 init_rng, c.alpha_semantics);
    for (auto* mlp : {&pair.student_encoder, &pair.student_projector, &pair.student_predictor,
                      &pair.teacher_encoder, &pair.teacher_projector}) {
        for (auto& l : mlp->layers)
            if (l.norm) l.norm->eps = c.bn_eps;
    }
    OptimizerState opt(trainable_parameters(pair, c.mode), c.optim);
    std::optional<NegQueue> queue;
    if (c.mode == TrainMode::moco) {
        queue.emplace(c.moco.queue_size);
        Rng qrng = Rng::substream(c.seed, "queue");
        queue->fill_random(c.network.projector.back(), qrng);
    }
    return TrainState{c,
                      std::move(pair),
                      std::move(opt),
                      std::move(queue),
                      Rng::substream(c.seed, "augment"),
                      Rng::substream(c.seed, "perm")};
}

MetricsRecord train_step_views(TrainState& state, const Tensor& v, const Tensor& v2, const Schedules& sched,
                               std::int64_t k, TeacherTrace* trace) {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainConfig& c = state.config;
    const WorkerLayout layout = state.layout();
    const StepValues sv = step_values(sched, k);

    MetricsRecord rec;
    rec.iteration = k;
    rec.epoch = sched.iterations_per_epoch > 0 ? k / sched.iterations_per_epoch : 0;
    rec.lr = sv.lr;
    rec.m = sv.m;
    rec.alpha = sv.alpha;

    TeacherForwardOptions teacher;
    teacher.norm = c.teacher_norm();
    teacher.alpha = sv.alpha;
    teacher.shuffle_seed = state.perm_rng.next_u64();
    teacher.trace = trace;

    state.optimizer.zero_grad();
    Tensor loss;
    Tensor keys;
    if (c.mode == TrainMode::moco) {
        const Tensor q = forward_student(state.pair, v, layout, c.student_norm()).projection;
        teacher.view = 1;
        keys = forward_teacher(state.pair, v2, layout, teacher);
        loss = infonce_loss(q, keys, *state.queue, c.moco.temperature);
        rec.l1 = loss.item();
    } else {
        SymmetrizedOptions opt;
        opt.student_norm = c.student_norm();
        opt.teacher = teacher;
        LossValue lv = symmetrized_loss(state.pair, v, v2, layout, opt);
        loss = lv.total;
        rec.l1 = lv.l1;
        rec.l2 = lv.l2;
    }
    rec.loss = loss.item();
    if (!std::isfinite(rec.loss)) {
        health().nonfinite_losses++;
        for (MomentumBNState* s : state.pair.teacher_bn_states()) s->pending.clear();
        throw NonFiniteLossError("non-finite loss " + fmt_double(rec.loss) + " at iteration " + std::to_string(k) +
                                     " (L1=" + fmt_double(rec.l1) + ", L2=" + fmt_double(rec.l2) +
                                     ", lr=" + fmt_double(rec.lr) + ")",
                                 k);
    }

    loss.backward();
    optimizer_step(c.optimizer, state.optimizer, sv.lr);

    double drift2 = 0.0;
    for (MomentumBNState* s : state.pair.teacher_bn_states()) {
        const double d = commit_pending(*s, sv.alpha);
        rec.layer_drift.push_back(d);
        drift2 += d * d;
    }
    rec.hist_drift = std::sqrt(drift2);

    ema_update(state.pair, sv.m);
    if (state.queue) queue_update(*state.queue, keys);

    rec.sec_per_iter = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

MetricsRecord train_step(TrainState& state, const Tensor& batch, const Schedules& sched, std::int64_t k,
                         const std::optional<std::pair<std::size_t, std::size_t>>& image_shape) {
    auto [v, v2] = make_views(batch, state.config.augment, state.augment_rng, image_shape);
    return train_step_views(state, v, v2, sched, k);
}

std::uint64_t comm_bytes_per_iteration(const TrainConfig& c) {
    const std::size_t forwards = c.mode == TrainMode::moco ? 1 : 2;
    const std::size_t W = c.workers;
    const MlpSpec enc = c.network.encoder_spec();
    const MlpSpec proj = c.network.projector_spec();
    const MlpSpec pred = c.network.predictor_spec();
    auto channels = [](const MlpSpec& s) {
        std::size_t n = 0;
        for (std::size_t l = 0; l < s.layers(); ++l)
            if (s.use_bn[l]) n += s.widths[l + 1];
        return n;
    };
    std::uint64_t bytes = 0;
    if (c.student_norm() == StudentNorm::synced) {
        std::size_t ch = channels(enc) + channels(proj) + (c.mode == TrainMode::moco ? 0 : channels(pred));
        // statistics in the forward pass and their gradients in the backward pass
        bytes += 2 * forwards * synced_bn_comm_bytes(ch, W);
    }
    switch (c.teacher_norm()) {
        case TeacherNorm::synced: bytes += forwards * synced_bn_comm_bytes(channels(enc) + channels(proj), W); break;
        case TeacherNorm::shuffling: {
            // samples leave their worker before the teacher and come back after it
            const std::uint64_t moved = c.batch_size * (W - 1) / W;
            bytes += forwards * moved * (enc.input_width() + proj.output_width()) * sizeof(double);
            break;
        }
        default: break;
    }
    return bytes;
}

TrainResult run_training(const TrainConfig& c, const Dataset& train, const MetricsSink& sink) {
    if (train.dim != c.network.encoder.front()) {
        throw ConfigError("network.encoder", "first width " + std::to_string(c.network.encoder.front()) +
                                                 " does not match data width " + std::to_string(train.dim));
    }
    TrainState state = TrainState::init(c);
    const Schedules sched = make_schedules(c, train.rows);
    Rng shuffle = Rng::substream(c.seed, "shuffle");

    TrainResult result{StudentTeacherPair{}, {}, {}, 0, 0.0, comm_bytes_per_iteration(c)};
    double total_sec = 0.0;
    std::int64_t k = 0;
    for (int epoch = 0; epoch < c.epochs; ++epoch) {
        const std::vector<std::size_t> order = shuffle.permutation(train.rows);
        for (std::int64_t b = 0; b < sched.iterations_per_epoch; ++b, ++k) {
            const std::span<const std::size_t> idx(order.data() + b * c.batch_size, c.batch_size);
            MetricsRecord rec = train_step(state, train.batch(idx), sched, k, train.image_shape);
            total_sec += rec.sec_per_iter;
            if (!c.record_timing) rec.sec_per_iter = 0.0;
            if (k % static_cast<std::int64_t>(c.log_interval) == 0) {
                if (sink) sink(rec);
                result.metrics.push_back(std::move(rec));
            }
        }
    }
    result.iterations = k;
    result.mean_sec_per_iter = k > 0 ? total_sec / static_cast<double>(k) : 0.0;
    result.checkpoint = dump_teacher(state.pair);
    result.pair = std::move(state.pair);
    return result;
}

}  // namespace m2t
