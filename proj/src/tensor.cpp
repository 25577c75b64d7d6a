#include "m2t/tensor.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "m2t/errors.h"
#include "m2t/health.h"

namespace m2t {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    node->seq = g_next_seq++;
    node->op = "leaf";
    return node;
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + shape_str(t.shape()));
    }
}

// Index maps from an output position to each operand's flat position.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> ia;  // empty = identity
    std::vector<std::size_t> ib;
};

std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
    const std::size_t n = shape_numel(out);
    std::vector<std::size_t> idx(n);
    if (shape_numel(in) == 1) {
        std::fill(idx.begin(), idx.end(), 0);
        return idx;
    }
    const std::size_t r = out.size();
    std::vector<std::size_t> in_stride(r, 0);
    std::size_t s = 1;
    for (std::size_t d = r; d-- > 0;) {
        in_stride[d] = in[d] == 1 ? 0 : s;
        s *= in[d];
    }
    std::vector<std::size_t> counter(r, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t off = 0;
        for (std::size_t d = 0; d < r; ++d) off += counter[d] * in_stride[d];
        idx[i] = off;
        for (std::size_t d = r; d-- > 0;) {
            if (++counter[d] < out[d]) break;
            counter[d] = 0;
        }
    }
    return idx;
}

Broadcast broadcast(const Tensor& a, const Tensor& b, const char* op) {
    Broadcast bc;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) {
        bc.out = sa;
        return bc;
    }
    if (a.numel() == 1 && (b.numel() != 1 || sb.size() >= sa.size())) {
        bc.out = sb;
    } else if (b.numel() == 1) {
        bc.out = sa;
    } else {
        if (sa.size() != sb.size()) {
            throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(sa) + " and " +
                                 shape_str(sb));
        }
        bc.out.resize(sa.size());
        for (std::size_t d = 0; d < sa.size(); ++d) {
            if (sa[d] != sb[d] && sa[d] != 1 && sb[d] != 1) {
                throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(sa) +
                                     " and " + shape_str(sb));
            }
            bc.out[d] = std::max(sa[d], sb[d]);
        }
    }
    if (sa != bc.out) bc.ia = broadcast_index(sa, bc.out);
    if (sb != bc.out) bc.ib = broadcast_index(sb, bc.out);
    return bc;
}

inline std::size_t map_index(const std::vector<std::size_t>& m, std::size_t i) {
    return m.empty() ? i : m[i];
}

// Elementwise binary op. `fwd(a, b)`, `da(a, b, y)`, `db(a, b, y)` are local partials.
template <class Fwd, class Da, class Db>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
    Broadcast bc = broadcast(a, b, name);
    const std::size_t n = shape_numel(bc.out);
    std::vector<double> y(n);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = fwd(av[map_index(bc.ia, i)], bv[map_index(bc.ib, i)]);
    }
    return make_op(name, bc.out, std::move(y), {a, b},
                   [ia = std::move(bc.ia), ib = std::move(bc.ib), da, db](
                       const detail::Node& self, std::span<std::vector<double>*> grads) {
                       const auto& pa = self.parents[0]->values;
                       const auto& pb = self.parents[1]->values;
                       for (std::size_t i = 0; i < self.values.size(); ++i) {
                           const std::size_t ja = map_index(ia, i);
                           const std::size_t jb = map_index(ib, i);
                           const double g = self.grad[i];
                           if (grads[0]) (*grads[0])[ja] += g * da(pa[ja], pb[jb], self.values[i]);
                           if (grads[1]) (*grads[1])[jb] += g * db(pa[ja], pb[jb], self.values[i]);
                       }
                   });
}

// Elementwise unary op with local derivative `d(x, y)`.
template <class Fwd, class D>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, D d) {
    std::vector<double> y(x.numel());
    auto xv = x.values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xv[i]);
    return make_op(name, x.shape(), std::move(y), {x},
                   [d](const detail::Node& self, std::span<std::vector<double>*> grads) {
                       if (!grads[0]) return;
                       const auto& px = self.parents[0]->values;
                       for (std::size_t i = 0; i < self.values.size(); ++i) {
                           (*grads[0])[i] += self.grad[i] * d(px[i], self.values[i]);
                       }
                   });
}

// outer x axis x inner decomposition of a shape around `axis`.
struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                             shape_str(s));
    }
    AxisSplit a;
    for (std::size_t d = 0; d < axis; ++d) a.outer *= s[d];
    a.len = s[axis];
    for (std::size_t d = axis + 1; d < s.size(); ++d) a.inner *= s[d];
    if (a.len == 0) throw DimensionError(std::string(op) + ": empty reduction");
    return a;
}

Shape reduced_shape(Shape s, std::size_t axis) {
    s[axis] = 1;
    return s;
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<double>& detail::Node::grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
}

// --- NoGradGuard ---

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// --- Tensor ---

Tensor::Tensor() : node_(make_leaf({1}, {0.0}, false)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        v.insert(v.end(), row.begin(), row.end());
    }
    return from({r, c}, std::move(v), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
    return from({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

std::size_t Tensor::rows() const {
    require_rank2(*this, "rows");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require_rank2(*this, "cols");
    return node_->shape[1];
}

std::span<double> Tensor::mutable_values() {
    if (!node_->is_leaf()) throw Error("mutable_values on a non-leaf tensor (op '" + node_->op + "')");
    return node_->values;
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->values[r * cols() + c]; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw Error("requires_grad can only be set on leaves");
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
    return *this;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(make_leaf(node_->shape, node_->values, false)); }

Tensor Tensor::clone(bool requires_grad) const {
    return Tensor(make_leaf(node_->shape, node_->values, requires_grad));
}

void Tensor::backward() const { Tape::reachable_from(*this).backward(*this); }

// --- Tape ---

Tape Tape::reachable_from(const Tensor& root) {
    Tape tape;
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::shared_ptr<detail::Node>> stack{root.node()};
    while (!stack.empty()) {
        auto n = std::move(stack.back());
        stack.pop_back();
        if (!n->requires_grad || !seen.insert(n.get()).second) continue;
        for (const auto& p : n->parents) stack.push_back(p);
        tape.nodes_.push_back(std::move(n));
    }
    std::sort(tape.nodes_.begin(), tape.nodes_.end(),
              [](const auto& a, const auto& b) { return a->seq < b->seq; });
    return tape;
}

void Tape::backward(const Tensor& root, const std::function<void(const detail::Node&)>& visit) const {
    if (root.numel() != 1) {
        throw DimensionError("backward expects a scalar loss, got shape " + shape_str(root.shape()));
    }
    if (!root.requires_grad()) return;
    for (const auto& n : nodes_) {
        if (!n->is_leaf()) n->grad.assign(n->values.size(), 0.0);
    }
    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        detail::Node& n = **it;
        if (n.is_leaf() || !n.backward) continue;
        n.backward(n);
        if (visit) visit(n);
    }
}

// --- op construction ---

Tensor make_op(std::string name, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               std::function<void(const detail::Node& self, std::span<std::vector<double>*> input_grads)> rule) {
    auto node = make_leaf(std::move(shape), std::move(values), false);
    node->op = std::move(name);
    const bool track = grad_enabled() &&
                       std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!track) return Tensor(std::move(node));

    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = [rule = std::move(rule)](detail::Node& self) {
        std::vector<std::vector<double>*> grads(self.parents.size(), nullptr);
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            if (self.parents[i]->requires_grad) grads[i] = &self.parents[i]->grad_buffer();
        }
        rule(self, grads);
    };
    return Tensor(std::move(node));
}

// --- linear algebra ---

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> y(m * n, 0.0);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        double* yrow = &y[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            const double* brow = &bv[p * n];
            for (std::size_t j = 0; j < n; ++j) yrow[j] += aip * brow[j];
        }
    }
    return make_op("matmul", {m, n}, std::move(y), {a, b},
                   [m, k, n](const detail::Node& self, std::span<std::vector<double>*> grads) {
                       const auto& g = self.grad;
                       const auto& av = self.parents[0]->values;
                       const auto& bv = self.parents[1]->values;
                       if (auto* ga = grads[0]) {  // g * b^T
                           for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                   double s = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
                                   (*ga)[i * k + p] += s;
                               }
                       }
                       if (auto* gb = grads[1]) {  // a^T * g
                           for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                   const double aip = av[i * k + p];
                                   for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += aip * g[i * n + j];
                               }
                       }
                   });
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<double> y(r * c);
    auto av = a.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) y[j * r + i] = av[i * c + j];
    return make_op("transpose", {c, r}, std::move(y), {a},
                   [r, c](const detail::Node& self, std::span<std::vector<double>*> grads) {
                       if (!grads[0]) return;
                       for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j) (*grads[0])[i * c + j] += self.grad[j * r + i];
                   });
}

// --- elementwise ---

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    auto bv = b.values();
    const auto zeros = static_cast<std::uint64_t>(std::count(bv.begin(), bv.end(), 0.0));
    if (zeros) health().div_by_zero += zeros;
    return binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

Tensor relu(const Tensor& x) {
    return unary(
        "relu", x, [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; },  // NaN passes through
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sqrt(const Tensor& x) {
    return unary(
        "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor exp(const Tensor& x) {
    return unary(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor neg(const Tensor& x) {
    return unary(
        "neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& x, double c) {
    return unary(
        "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
    return unary(
        "mul_scalar", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

// --- reductions ---

Tensor sum(const Tensor& x, std::size_t axis) {
    const AxisSplit s = split_axis(x.shape(), axis, "sum");
    std::vector<double> y(s.outer * s.inner, 0.0);
    auto xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t a = 0; a < s.len; ++a)
            for (std::size_t i = 0; i < s.inner; ++i) y[o * s.inner + i] += xv[(o * s.len + a) * s.inner + i];
    return make_op("sum", reduced_shape(x.shape(), axis), std::move(y), {x},
                   [s](const detail::Node& self, std::span<std::vector<double>*> grads) {
                       if (!grads[0]) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                           for (std::size_t a = 0; a < s.len; ++a)
                               for (std::size_t i = 0; i < s.inner; ++i)
                                   (*grads[0])[(o * s.len + a) * s.inner + i] += self.grad[o * s.inner + i];
                   });
}

Tensor mean(const Tensor& x, std::size_t axis) {
    const AxisSplit s = split_axis(x.shape(), axis, "mean");
    const double m = static_cast<double>(s.len);
    std::vector<double> y(s.outer * s.inner, 0.0);
    auto xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t a = 0; a < s.len; ++a)
            for (std::size_t i = 0; i < s.inner; ++i) y[o * s.inner + i] += xv[(o * s.len + a) * s.inner + i];
    for (double& v : y) v /= m;
    return make_op("mean", reduced_shape(x.shape(), axis), std::move(y), {x},
                   [s, m](const detail::Node& self, std::span<std::vector<double>*> grads) {
                       if (!grads[0]) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                           for (std::size_t a = 0; a < s.len; ++a)
                               for (std::size_t i = 0; i < s.inner; ++i)
                                   (*grads[0])[(o * s.len + a) * s.inner + i] += self.grad[o * s.inner + i] / m;
                   });
}

Tensor var(const Tensor& x, std::size_t axis) {
    const AxisSplit s = split_axis(x.shape(), axis, "var");
    const double m = static_cast<double>(s.len);
    auto xv = x.values();
    std::vector<double> mu(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t a = 0; a < s.len; ++a)
            for (std::size_t i = 0; i < s.inner; ++i) mu[o * s.inner + i] += xv[(o * s.len + a) * s.inner + i];
    for (double& v : mu) v /= m;
    std::vector<double> y(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t a = 0; a < s.len; ++a)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const double d = xv[(o * s.len + a) * s.inner + i] - mu[o * s.inner + i];
                y[o * s.inner + i] += d * d;
            }
    for (double& v : y) v /= m;
    return make_op("var", reduced_shape(x.shape(), axis), std::move(y), {x},
                   [s, m, mu = std::move(mu)](const detail::Node& self, std::span<std::vector<double>*> grads) {
                       if (!grads[0]) return;
                       const auto& px = self.parents[0]->values;
                       for (std::size_t o = 0; o < s.outer; ++o)
                           for (std::size_t a = 0; a < s.len; ++a)
                               for (std::size_t i = 0; i < s.inner; ++i) {
                                   const std::size_t j = (o * s.len + a) * s.inner + i;
                                   (*grads[0])[j] += self.grad[o * s.inner + i] * 2.0 * (px[j] - mu[o * s.inner + i]) / m;
                               }
                   });
}

Tensor sum_all(const Tensor& x) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    return make_op("sum_all", {1}, {total}, {x},
                   [](const detail::Node& self, std::span<std::vector<double>*> grads) {
                       if (!grads[0]) return;
                       for (double& g : *grads[0]) g += self.grad[0];
                   });
}

Tensor mean_all(const Tensor& x) {
    if (x.numel() == 0) throw DimensionError("mean_all: empty reduction");
    const double n = static_cast<double>(x.numel());
    double total = 0.0;
    for (double v : x.values()) total += v;
    return make_op("mean_all", {1}, {total / n}, {x},
                   [n](const detail::Node& self, std::span<std::vector<double>*> grads) {
                       if (!grads[0]) return;
                       for (double& g : *grads[0]) g += self.grad[0] / n;
                   });
}

// --- rows ---

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_rank2(x, "gather_rows");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    std::vector<double> y(rows.size() * c);
    auto xv = x.values();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= r) {
            throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                                 shape_str(x.shape()));
        }
        std::copy_n(&xv[rows[i] * c], c, &y[i * c]);
    }
    return make_op("gather_rows", {rows.size(), c}, std::move(y), {x},
                   [idx = std::vector<std::size_t>(rows.begin(), rows.end()), c](
                       const detail::Node& self, std::span<std::vector<double>*> grads) {
                       if (!grads[0]) return;
                       for (std::size_t i = 0; i < idx.size(); ++i)
                           for (std::size_t j = 0; j < c; ++j) (*grads[0])[idx[i] * c + j] += self.grad[i * c + j];
                   });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    if (begin > end) throw DimensionError("slice_rows: begin > end");
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return gather_rows(x, idx);
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t c = parts[0].cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.cols() != c) {
            throw DimensionError("concat_rows: incompatible shapes " + shape_str(parts[0].shape()) + " and " +
                                 shape_str(p.shape()));
        }
        r += p.rows();
    }
    std::vector<double> y;
    y.reserve(r * c);
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(y.size());
        y.insert(y.end(), p.values().begin(), p.values().end());
    }
    return make_op("concat_rows", {r, c}, std::move(y), std::vector<Tensor>(parts.begin(), parts.end()),
                   [offsets](const detail::Node& self, std::span<std::vector<double>*> grads) {
                       for (std::size_t k = 0; k < grads.size(); ++k) {
                           if (!grads[k]) continue;
                           for (std::size_t j = 0; j < grads[k]->size(); ++j)
                               (*grads[k])[j] += self.grad[offsets[k] + j];
                       }
                   });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
    require_rank2(x, "l2_normalize_rows");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    auto xv = x.values();
    std::vector<double> denom(r);
    std::vector<double> y(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < c; ++j) ss += xv[i * c + j] * xv[i * c + j];
        const double n = std::sqrt(ss);
        if (n <= eps) health().zero_norm_rows++;
        denom[i] = std::max(n, eps);
        for (std::size_t j = 0; j < c; ++j) y[i * c + j] = xv[i * c + j] / denom[i];
    }
    return make_op("l2_normalize_rows", {r, c}, std::move(y), {x},
                   [r, c, eps, denom = std::move(denom)](const detail::Node& self,
                                                        std::span<std::vector<double>*> grads) {
                       if (!grads[0]) return;
                       for (std::size_t i = 0; i < r; ++i) {
                           const double* g = &self.grad[i * c];
                           const double* y = &self.values[i * c];
                           double* gx = &(*grads[0])[i * c];
                           if (denom[i] <= eps) {  // clamped branch: y = x / eps
                               for (std::size_t j = 0; j < c; ++j) gx[j] += g[j] / eps;
                               continue;
                           }
                           double gy = 0.0;
                           for (std::size_t j = 0; j < c; ++j) gy += g[j] * y[j];
                           for (std::size_t j = 0; j < c; ++j) gx[j] += (g[j] - y[j] * gy) / denom[i];
                       }
                   });
}

Tensor logsumexp_rows(const Tensor& x) {
    require_rank2(x, "logsumexp_rows");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (c == 0) throw DimensionError("logsumexp_rows: empty reduction");
    auto xv = x.values();
    std::vector<double> y(r);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(xv[i * c + j] - mx);
        y[i] = mx + std::log(s);
    }
    return make_op("logsumexp_rows", {r, 1}, std::move(y), {x},
                   [r, c](const detail::Node& self, std::span<std::vector<double>*> grads) {
                       if (!grads[0]) return;
                       const auto& px = self.parents[0]->values;
                       for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                               (*grads[0])[i * c + j] += self.grad[i] * std::exp(px[i * c + j] - self.values[i]);
                   });
}

}  // namespace m2t
