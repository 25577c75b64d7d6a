#pragma once

#include <cstddef>
#include <deque>
#include <vector>

#include "m2t/model.h"
#include "m2t/tensor.h"

namespace m2t {

/// FIFO memory bank of L2-normalized keys.
class NegQueue {
public:
    explicit NegQueue(std::size_t capacity);

    /// Normalizes each row of `keys` and appends it, evicting the oldest
    /// entries beyond capacity.
    void enqueue(const Tensor& keys);
    /// Fills the queue with random unit vectors of width `dim`.
    void fill_random(std::size_t dim, Rng& rng);

    std::size_t size() const { return keys_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t dim() const { return keys_.empty() ? 0 : keys_.front().size(); }
    const std::vector<double>& key(std::size_t i) const { return keys_[i]; }  // 0 = oldest
    /// Stored keys as a [size x dim] constant tensor, oldest first.
    Tensor as_tensor() const;

private:
    std::size_t capacity_;
    std::deque<std::vector<double>> keys_;
};

struct LossValue {
    Tensor total;
    double l1 = 0.0;
    double l2 = 0.0;
    Tensor teacher_v2;  // teacher(v'), target of L1
    Tensor teacher_v;   // teacher(v), target of L2
};

/// Mean over the batch of ||normalize(p) - normalize(z)||^2 = 2 - 2 cos(p, z).
/// `z` is treated as a gradient constant.
Tensor byol_loss(const Tensor& p, const Tensor& z);

struct SymmetrizedOptions {
    StudentNorm student_norm = StudentNorm::plain;
    TeacherForwardOptions teacher;  // alpha, norm, shuffle seed, trace
};

/// L1 = loss(student(v), teacher(v')), L2 = loss(student(v'), teacher(v)).
/// Both teacher passes normalize against the history of the previous
/// iteration; each stages its view statistics for the single lazy commit
/// that the caller performs once the iteration is complete.
LossValue symmetrized_loss(StudentTeacherPair& pair, const Tensor& v, const Tensor& v2, const WorkerLayout& layout,
                           const SymmetrizedOptions& opt);

/// Cross-entropy of softmax over [cos(q, k_pos), cos(q, n_1), ...] / tau with
/// the positive as target, averaged over the batch. Keys are constants.
Tensor infonce_loss(const Tensor& q, const Tensor& k_pos, const NegQueue& queue, double temperature);

/// FIFO enqueue of a batch of keys.
void queue_update(NegQueue& queue, const Tensor& new_keys);

}  // namespace m2t
