#pragma once

// Dense double-precision tensors with reverse-mode automatic differentiation.
//
// Every operation on tensors that participate in gradient tracking records a
// node with a monotonically increasing sequence number. Backward replays the
// nodes reachable from the loss in reverse recording order, so each recorded
// operation runs its local rule exactly once per backward pass.
//
// Broadcasting: binary ops accept operands of equal rank whose dimensions are
// either equal or 1, plus a single-element tensor against anything.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace m2t {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first backward reaches this node
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::string op;  // "leaf" for leaves
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // propagates this->grad into parents

    bool is_leaf() const { return parents.empty(); }
    std::vector<double>& grad_buffer();  // allocates zeros on demand
};

}  // namespace detail

class Tensor {
public:
    Tensor();  // scalar zero, no grad

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);
    static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
    static Tensor scalar(double value);

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->values.size(); }
    std::size_t rows() const;  // shape[0] of a rank-2 tensor
    std::size_t cols() const;  // shape[1] of a rank-2 tensor

    std::span<const double> values() const { return node_->values; }
    /// In-place access for parameter updates. Only valid on leaves.
    std::span<double> mutable_values();
    double item() const;
    double at(std::size_t i) const { return node_->values[i]; }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const { return node_->is_leaf(); }
    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient buffer; empty span when no gradient has been accumulated.
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad();

    /// Same values, cut from the graph.
    Tensor detach() const;
    /// Deep copy of values into a fresh leaf.
    Tensor clone(bool requires_grad = false) const;

    /// Reverse-mode sweep from this scalar. Leaf gradients accumulate.
    void backward() const;

    const std::string& op() const { return node_->op; }
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Recorded operations reachable from a root, in recording order.
class Tape {
public:
    static Tape reachable_from(const Tensor& root);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return nodes_; }

    /// Seeds d(root)/d(root) = 1 and runs local backward rules in reverse
    /// recording order. `visit` is called once per op node as it is replayed.
    void backward(const Tensor& root,
                  const std::function<void(const detail::Node&)>& visit = {}) const;

private:
    std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// While alive, new operations on this thread are not recorded.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

// Reductions over one axis; the reduced axis is kept with size 1.
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
/// Biased variance: 1/m * sum (x - mean)^2.
Tensor var(const Tensor& x, std::size_t axis);
/// Sum / mean of every element, returned as shape {1}.
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Row manipulation on rank-2 tensors
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);

/// Divides each row by max(||row||_2, eps). Rows with norm below eps are
/// counted in health().zero_norm_rows.
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

/// Row-wise log(sum(exp(x))) with a detached max shift; shape {rows, 1}.
Tensor logsumexp_rows(const Tensor& x);

/// Registers an op with caller-supplied forward values and backward rule.
/// Used to build custom ops (and, in tests, deliberately broken ones).
Tensor make_op(std::string name, Shape shape, std::vector<double> values,
               std::vector<Tensor> inputs,
               std::function<void(const detail::Node& self,
                                  std::span<std::vector<double>*> input_grads)> rule);

}  // namespace m2t
