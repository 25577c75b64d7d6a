#include "m2t/objectives.h"

#include <cmath>

#include "m2t/errors.h"

namespace m2t {

NegQueue::NegQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ValueError("queue capacity must be positive");
}

void NegQueue::enqueue(const Tensor& keys) {
    if (keys.numel() == 0) return;
    if (keys.rank() != 2) throw DimensionError("queue keys must be [n x d], got " + shape_str(keys.shape()));
    if (!keys_.empty() && keys.cols() != dim()) {
        throw DimensionError("queue holds " + std::to_string(dim()) + "-dim keys, got " + shape_str(keys.shape()));
    }
    NoGradGuard guard;
    const Tensor unit = l2_normalize_rows(keys);
    const std::size_t d = keys.cols();
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        keys_.emplace_back(unit.values().begin() + i * d, unit.values().begin() + (i + 1) * d);
        if (keys_.size() > capacity_) keys_.pop_front();
    }
}

void NegQueue::fill_random(std::size_t dim, Rng& rng) {
    std::vector<double> v(capacity_ * dim);
    for (double& x : v) x = rng.normal();
    keys_.clear();
    enqueue(Tensor::from({capacity_, dim}, std::move(v)));
}

Tensor NegQueue::as_tensor() const {
    std::vector<double> v;
    v.reserve(keys_.size() * dim());
    for (const auto& k : keys_) v.insert(v.end(), k.begin(), k.end());
    return Tensor::from({keys_.size(), dim()}, std::move(v));
}

Tensor byol_loss(const Tensor& p, const Tensor& z) {
    if (p.shape() != z.shape() || p.rank() != 2) {
        throw DimensionError("byol_loss: prediction " + shape_str(p.shape()) + " vs target " + shape_str(z.shape()));
    }
    const Tensor diff = l2_normalize_rows(p) - l2_normalize_rows(z.detach());
    return mean_all(sum(diff * diff, 1));
}

LossValue symmetrized_loss(StudentTeacherPair& pair, const Tensor& v, const Tensor& v2, const WorkerLayout& layout,
                           const SymmetrizedOptions& opt) {
    if (v.shape() != v2.shape()) {
        throw DimensionError("symmetrized_loss: views " + shape_str(v.shape()) + " and " + shape_str(v2.shape()));
    }
    TeacherForwardOptions t1 = opt.teacher;
    t1.view = 1;
    TeacherForwardOptions t2 = opt.teacher;
    t2.view = 0;
    t2.shuffle_seed = opt.teacher.shuffle_seed + 7919;

    const StudentOutput s1 = forward_student(pair, v, layout, opt.student_norm);
    const Tensor z1 = forward_teacher(pair, v2, layout, t1);
    const Tensor loss1 = byol_loss(s1.prediction, z1);

    const StudentOutput s2 = forward_student(pair, v2, layout, opt.student_norm);
    const Tensor z2 = forward_teacher(pair, v, layout, t2);
    const Tensor loss2 = byol_loss(s2.prediction, z2);

    return LossValue{loss1 + loss2, loss1.item(), loss2.item(), z1, z2};
}

Tensor infonce_loss(const Tensor& q, const Tensor& k_pos, const NegQueue& queue, double temperature) {
    if (!(temperature > 0.0)) throw ValueError("InfoNCE temperature must be positive");
    if (q.shape() != k_pos.shape() || q.rank() != 2) {
        throw DimensionError("infonce_loss: query " + shape_str(q.shape()) + " vs key " + shape_str(k_pos.shape()));
    }
    if (queue.size() > 0 && queue.dim() != q.cols()) {
        throw DimensionError("infonce_loss: queue dim " + std::to_string(queue.dim()) + " vs query " +
                             shape_str(q.shape()));
    }
    const Tensor qn = l2_normalize_rows(q);
    const Tensor kn = l2_normalize_rows(k_pos.detach());
    const Tensor pos = sum(qn * kn, 1);  // [n x 1]
    Tensor logits = pos;
    if (queue.size() > 0) {
        const Tensor neg = matmul(qn, transpose(queue.as_tensor()));  // [n x K]
        // [pos | neg] assembled as a transpose of row-concatenation.
        const Tensor parts[] = {transpose(pos), transpose(neg)};
        logits = transpose(concat_rows(parts));
    }
    logits = mul_scalar(logits, 1.0 / temperature);
    const Tensor pos_logit = mul_scalar(pos, 1.0 / temperature);
    return mean_all(logsumexp_rows(logits) - pos_logit);
}

void queue_update(NegQueue& queue, const Tensor& new_keys) { queue.enqueue(new_keys); }

}  // namespace m2t
