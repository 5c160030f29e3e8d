#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// Values are immutable once an op has consumed them; the graph is a DAG of
// shared nodes and backward() walks it in reverse creation order, which is
// a topological order and fixes the gradient accumulation sequence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace vtr {

using Scalar = double;
using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Shape shape;
    std::vector<Scalar> value;
    std::vector<Scalar> grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward;

    std::size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

inline std::uint64_t next_node_id() {
    static std::uint64_t counter = 0;
    return ++counter;
}

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad = false) {
        if (numel(shape) != data.size())
            throw TensorError("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        node_ = std::make_shared<detail::Node>();
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
        node_->id = detail::next_node_id();
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<Scalar> d(numel(shape), 0.0);
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor full(Shape shape, Scalar fill, bool requires_grad = false) {
        std::vector<Scalar> d(numel(shape), fill);
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor scalar(Scalar v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rows() const { return node_->shape.at(0); }
    std::size_t cols() const { return node_->shape.at(1); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<Scalar>& data() const { return node_->value; }
    // Mutable access is reserved for leaves (parameter updates, finite
    // differencing); mutating an interior node invalidates the tape.
    std::vector<Scalar>& mutable_data() { return node_->value; }

    Scalar item() const {
        if (node_->value.size() != 1) throw TensorError("item() on non-scalar tensor");
        return node_->value[0];
    }

    Scalar at(std::size_t i) const { return node_->value.at(i); }
    Scalar at(std::size_t r, std::size_t c) const { return node_->value.at(r * cols() + c); }

    const std::vector<Scalar>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    bool all_finite() const {
        for (Scalar v : node_->value)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // Detached view: same values, cut from the graph.
    Tensor detach() const {
        Tensor t;
        t.node_ = std::make_shared<detail::Node>();
        t.node_->shape = node_->shape;
        t.node_->value = node_->value;
        t.node_->requires_grad = false;
        t.node_->id = detail::next_node_id();
        return t;
    }

    detail::NodePtr node() const { return node_; }

    static Tensor from_node(detail::NodePtr n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

    // Runs reverse-mode accumulation from this scalar. Gradients land in the
    // .grad buffers of every requires_grad node reachable from here.
    void backward() const;

private:
    detail::NodePtr node_;
};

namespace detail {

inline NodePtr make_op(Shape shape, std::vector<Scalar> value,
                       std::vector<NodePtr> parents,
                       std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->id = next_node_id();
    for (auto& p : parents)
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward = std::move(backward);
    }
    return n;
}

}  // namespace detail

inline void Tensor::backward() const {
    if (size() != 1) throw TensorError("backward() requires a scalar loss");
    // Reverse creation order is a topological order of the DAG.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });
    for (detail::Node* n : order) n->ensure_grad();
    node_->grad[0] = 1.0;
    for (detail::Node* n : order)
        if (n->backward) n->backward(*n);
}

// ---------------------------------------------------------------------------
// elementwise ops

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw TensorError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    return Tensor::from_node(detail::make_op(
        a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.size(); ++i) an->grad[i] += n.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n.size(); ++i) bn->grad[i] += n.grad[i];
            }
        }));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw TensorError("sub: shape mismatch");
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node(), bn = b.node();
    return Tensor::from_node(detail::make_op(
        a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.size(); ++i) an->grad[i] += n.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n.size(); ++i) bn->grad[i] -= n.grad[i];
            }
        }));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw TensorError("mul: shape mismatch");
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    return Tensor::from_node(detail::make_op(
        a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
            }
        }));
}

inline Tensor scale(const Tensor& a, Scalar c) {
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto an = a.node();
    return Tensor::from_node(
        detail::make_op(a.shape(), std::move(out), {an}, [an, c](detail::Node& n) {
            an->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) an->grad[i] += n.grad[i] * c;
        }));
}

// a * s where s is a scalar tensor (e.g. a trainable temperature factor).
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw TensorError("scale_by: scale must be scalar");
    const Scalar c = s.item();
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto an = a.node(), sn = s.node();
    return Tensor::from_node(
        detail::make_op(a.shape(), std::move(out), {an, sn}, [an, sn, c](detail::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.size(); ++i) an->grad[i] += n.grad[i] * c;
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                Scalar acc = 0.0;
                for (std::size_t i = 0; i < n.size(); ++i) acc += n.grad[i] * an->value[i];
                sn->grad[0] += acc;
            }
        }));
}

inline Tensor gelu(const Tensor& a) {
    constexpr Scalar kInvSqrt2 = 0.70710678118654752440;
    constexpr Scalar kInvSqrt2Pi = 0.39894228040143267794;
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Scalar x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    auto an = a.node();
    return Tensor::from_node(
        detail::make_op(a.shape(), std::move(out), {an}, [an](detail::Node& n) {
            an->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) {
                const Scalar x = an->value[i];
                const Scalar cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const Scalar pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                an->grad[i] += n.grad[i] * (cdf + x * pdf);
            }
        }));
}

inline Tensor exp_clamped(const Tensor& a, Scalar max_value) {
    if (a.size() != 1) throw TensorError("exp_clamped: scalar only");
    const Scalar raw = std::exp(a.item());
    const bool clamped = raw > max_value;
    std::vector<Scalar> out{clamped ? max_value : raw};
    auto an = a.node();
    return Tensor::from_node(
        detail::make_op(a.shape(), std::move(out), {an}, [an, raw, clamped](detail::Node& n) {
            an->ensure_grad();
            if (!clamped) an->grad[0] += n.grad[0] * raw;
        }));
}

// ---------------------------------------------------------------------------
// matmul and reshaping

inline void matmul_accumulate(std::span<const Scalar> a, std::span<const Scalar> b,
                              std::span<Scalar> c, std::size_t m, std::size_t k,
                              std::size_t n) {
    // c[m,n] += a[m,k] * b[k,n], ikj order.
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* arow = a.data() + i * k;
        Scalar* crow = c.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const Scalar av = arow[kk];
            if (av == 0.0) continue;
            const Scalar* brow = b.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void matmul_at_b(std::span<const Scalar> a, std::span<const Scalar> b,
                        std::span<Scalar> c, std::size_t m, std::size_t k, std::size_t n) {
    // c[k,n] += a[m,k]^T * b[m,n]
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* arow = a.data() + i * k;
        const Scalar* brow = b.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const Scalar av = arow[kk];
            if (av == 0.0) continue;
            Scalar* crow = c.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void matmul_a_bt(std::span<const Scalar> a, std::span<const Scalar> b,
                        std::span<Scalar> c, std::size_t m, std::size_t k, std::size_t n) {
    // c[m,n] += a[m,k] * b[n,k]^T
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* arow = a.data() + i * k;
        Scalar* crow = c.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const Scalar* brow = b.data() + j * k;
            Scalar acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw TensorError("matmul: 2-D tensors required");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw TensorError("matmul: inner extents differ, " + shape_str(a.shape()) + " * " +
                          shape_str(b.shape()));
    std::vector<Scalar> out(m * n, 0.0);
    matmul_accumulate(a.data(), b.data(), out, m, k, n);
    auto an = a.node(), bn = b.node();
    return Tensor::from_node(detail::make_op(
        {m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](detail::Node& nd) {
            if (an->requires_grad) {
                an->ensure_grad();
                matmul_a_bt(nd.grad, bn->value, an->grad, m, n, k);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                matmul_at_b(an->value, nd.grad, bn->grad, m, k, n);
            }
        }));
}

inline Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2) throw TensorError("transpose: 2-D tensors required");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<Scalar> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    auto an = a.node();
    return Tensor::from_node(
        detail::make_op({n, m}, std::move(out), {an}, [an, m, n](detail::Node& nd) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += nd.grad[j * m + i];
        }));
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    if (a.shape().size() != 2) throw TensorError("slice_rows: 2-D tensors required");
    const std::size_t n = a.cols();
    if (begin + count > a.rows()) throw TensorError("slice_rows: range out of bounds");
    std::vector<Scalar> out(a.data().begin() + begin * n,
                            a.data().begin() + (begin + count) * n);
    auto an = a.node();
    return Tensor::from_node(
        detail::make_op({count, n}, std::move(out), {an}, [an, begin, n](detail::Node& nd) {
            an->ensure_grad();
            for (std::size_t i = 0; i < nd.size(); ++i) an->grad[begin * n + i] += nd.grad[i];
        }));
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TensorError("concat_rows: empty input");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.cols() != n)
            throw TensorError("concat_rows: column mismatch");
        m += p.rows();
    }
    std::vector<Scalar> out;
    out.reserve(m * n);
    std::vector<detail::NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        nodes.push_back(p.node());
    }
    return Tensor::from_node(
        detail::make_op({m, n}, std::move(out), nodes, [nodes](detail::Node& nd) {
            std::size_t off = 0;
            for (auto& p : nodes) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < p->size(); ++i) p->grad[i] += nd.grad[off + i];
                }
                off += p->size();
            }
        }));
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
    if (a.shape().size() != 2) throw TensorError("slice_cols: 2-D tensors required");
    const std::size_t m = a.rows(), n = a.cols();
    if (begin + count > n) throw TensorError("slice_cols: range out of bounds");
    std::vector<Scalar> out(m * count);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.data()[i * n + begin + j];
    auto an = a.node();
    return Tensor::from_node(detail::make_op(
        {m, count}, std::move(out), {an}, [an, begin, m, n, count](detail::Node& nd) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j)
                    an->grad[i * n + begin + j] += nd.grad[i * count + j];
        }));
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TensorError("concat_cols: empty input");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.rows() != m) throw TensorError("concat_cols: row mismatch");
        n += p.cols();
    }
    std::vector<Scalar> out(m * n);
    std::vector<detail::NodePtr> nodes;
    std::vector<std::size_t> widths;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * n + off + j] = p.data()[i * w + j];
        nodes.push_back(p.node());
        widths.push_back(w);
        off += w;
    }
    return Tensor::from_node(detail::make_op(
        {m, n}, std::move(out), nodes, [nodes, widths, m, n](detail::Node& nd) {
            std::size_t off = 0;
            for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                const std::size_t w = widths[pi];
                auto& p = nodes[pi];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j)
                            p->grad[i * w + j] += nd.grad[i * n + off + j];
                }
                off += w;
            }
        }));
}

inline Tensor replace_row(const Tensor& a, std::size_t idx, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw TensorError("replace_row: row shape mismatch");
    std::vector<Tensor> parts;
    if (idx > 0) parts.push_back(slice_rows(a, 0, idx));
    parts.push_back(row);
    if (idx + 1 < a.rows()) parts.push_back(slice_rows(a, idx + 1, a.rows() - idx - 1));
    return concat_rows(parts);
}

// Broadcast a [1,n] row across m rows.
inline Tensor broadcast_row(const Tensor& row, std::size_t m) {
    if (row.rows() != 1) throw TensorError("broadcast_row: needs a [1,n] tensor");
    const std::size_t n = row.cols();
    std::vector<Scalar> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        std::copy(row.data().begin(), row.data().end(), out.begin() + i * n);
    auto rn = row.node();
    return Tensor::from_node(
        detail::make_op({m, n}, std::move(out), {rn}, [rn, m, n](detail::Node& nd) {
            rn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) rn->grad[j] += nd.grad[i * n + j];
        }));
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) throw TensorError("reshape: element count mismatch");
    auto an = a.node();
    std::vector<Scalar> out = a.data();
    return Tensor::from_node(
        detail::make_op(std::move(shape), std::move(out), {an}, [an](detail::Node& nd) {
            an->ensure_grad();
            for (std::size_t i = 0; i < nd.size(); ++i) an->grad[i] += nd.grad[i];
        }));
}

// ---------------------------------------------------------------------------
// reductions and normalizations

inline Tensor sum(const Tensor& a) {
    Scalar acc = 0.0;
    for (Scalar v : a.data()) acc += v;
    auto an = a.node();
    return Tensor::from_node(detail::make_op({1}, {acc}, {an}, [an](detail::Node& nd) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->size(); ++i) an->grad[i] += nd.grad[0];
    }));
}

inline Tensor mean_all(const Tensor& a) { return scale(sum(a), 1.0 / double(a.size())); }

inline Tensor mean_rows(const Tensor& a) {
    // [m,n] -> [1,n]
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<Scalar> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
    for (auto& v : out) v /= double(m);
    auto an = a.node();
    return Tensor::from_node(
        detail::make_op({1, n}, std::move(out), {an}, [an, m, n](detail::Node& nd) {
            an->ensure_grad();
            const Scalar inv = 1.0 / double(m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += nd.grad[j] * inv;
        }));
}

inline Tensor mean_diag(const Tensor& a) {
    if (a.shape().size() != 2 || a.rows() != a.cols())
        throw TensorError("mean_diag: square matrix required");
    const std::size_t b = a.rows();
    Scalar acc = 0.0;
    for (std::size_t i = 0; i < b; ++i) acc += a.at(i, i);
    acc /= double(b);
    auto an = a.node();
    return Tensor::from_node(detail::make_op({1}, {acc}, {an}, [an, b](detail::Node& nd) {
        an->ensure_grad();
        const Scalar inv = nd.grad[0] / double(b);
        for (std::size_t i = 0; i < b; ++i) an->grad[i * b + i] += inv;
    }));
}

// Row-wise maximum, [m,n] -> [m,1]. Gradient routes to the first argmax.
inline Tensor rowwise_max(const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<Scalar> out(m);
    std::vector<std::size_t> arg(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j)
            if (a.data()[i * n + j] > a.data()[i * n + best]) best = j;
        out[i] = a.data()[i * n + best];
        arg[i] = best;
    }
    auto an = a.node();
    return Tensor::from_node(detail::make_op(
        {m, std::size_t{1}}, std::move(out), {an},
        [an, arg = std::move(arg), n](detail::Node& nd) {
            an->ensure_grad();
            for (std::size_t i = 0; i < arg.size(); ++i) an->grad[i * n + arg[i]] += nd.grad[i];
        }));
}

inline Tensor softmax_rows(const Tensor& a, Scalar temperature) {
    if (!(temperature > 0.0)) throw TensorError("softmax_rows: temperature must be positive");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<Scalar> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* row = a.data().data() + i * n;
        Scalar mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        Scalar z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp((row[j] - mx) / temperature);
            z += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    auto an = a.node();
    return Tensor::from_node(detail::make_op(
        {m, n}, std::move(out), {an}, [an, m, n, temperature](detail::Node& nd) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const Scalar* s = nd.value.data() + i * n;
                const Scalar* g = nd.grad.data() + i * n;
                Scalar dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += s[j] * g[j];
                for (std::size_t j = 0; j < n; ++j)
                    an->grad[i * n + j] += s[j] * (g[j] - dot) / temperature;
            }
        }));
}

inline Tensor log_softmax_rows(const Tensor& a, Scalar temperature) {
    if (!(temperature > 0.0)) throw TensorError("log_softmax_rows: temperature must be positive");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<Scalar> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* row = a.data().data() + i * n;
        Scalar mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        Scalar z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp((row[j] - mx) / temperature);
        const Scalar lse = std::log(z) + mx / temperature;
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] / temperature - lse;
    }
    auto an = a.node();
    return Tensor::from_node(detail::make_op(
        {m, n}, std::move(out), {an}, [an, m, n, temperature](detail::Node& nd) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const Scalar* lp = nd.value.data() + i * n;
                const Scalar* g = nd.grad.data() + i * n;
                Scalar gsum = 0.0;
                for (std::size_t j = 0; j < n; ++j) gsum += g[j];
                for (std::size_t j = 0; j < n; ++j)
                    an->grad[i * n + j] += (g[j] - std::exp(lp[j]) * gsum) / temperature;
            }
        }));
}

inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                         Scalar eps = 1e-5) {
    const std::size_t n = a.shape().back();
    if (gamma.size() != n || beta.size() != n) throw TensorError("layer_norm: affine size mismatch");
    const std::size_t m = a.size() / n;
    std::vector<Scalar> out(a.size());
    std::vector<Scalar> inv_std(m), means(m);
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* row = a.data().data() + i * n;
        Scalar mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= double(n);
        Scalar var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= double(n);
        const Scalar is = 1.0 / std::sqrt(var + eps);
        means[i] = mu;
        inv_std[i] = is;
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = (row[j] - mu) * is * gamma.data()[j] + beta.data()[j];
    }
    auto an = a.node(), gn = gamma.node(), bn = beta.node();
    return Tensor::from_node(detail::make_op(
        a.shape(), std::move(out), {an, gn, bn},
        [an, gn, bn, m, n, means = std::move(means),
         inv_std = std::move(inv_std)](detail::Node& nd) {
            for (std::size_t i = 0; i < m; ++i) {
                const Scalar* g = nd.grad.data() + i * n;
                const Scalar* x = an->value.data() + i * n;
                const Scalar mu = means[i], is = inv_std[i];
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (std::size_t j = 0; j < n; ++j) gn->grad[j] += g[j] * (x[j] - mu) * is;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::size_t j = 0; j < n; ++j) bn->grad[j] += g[j];
                }
                if (an->requires_grad) {
                    an->ensure_grad();
                    Scalar mean_dg = 0.0, mean_dgx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const Scalar dxhat = g[j] * gn->value[j];
                        const Scalar xhat = (x[j] - mu) * is;
                        mean_dg += dxhat;
                        mean_dgx += dxhat * xhat;
                    }
                    mean_dg /= double(n);
                    mean_dgx /= double(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const Scalar dxhat = g[j] * gn->value[j];
                        const Scalar xhat = (x[j] - mu) * is;
                        an->grad[i * n + j] += is * (dxhat - mean_dg - xhat * mean_dgx);
                    }
                }
            }
        }));
}

inline Tensor l2_normalize_rows(const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<Scalar> out(m * n);
    std::vector<Scalar> inv_norm(m);
    for (std::size_t i = 0; i < m; ++i) {
        Scalar s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a.data()[i * n + j] * a.data()[i * n + j];
        const Scalar norm = std::sqrt(s);
        if (!(norm > 0.0)) throw TensorError("l2_normalize_rows: zero-norm row");
        inv_norm[i] = 1.0 / norm;
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] * inv_norm[i];
    }
    auto an = a.node();
    return Tensor::from_node(detail::make_op(
        {m, n}, std::move(out), {an},
        [an, m, n, inv_norm = std::move(inv_norm)](detail::Node& nd) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const Scalar* y = nd.value.data() + i * n;
                const Scalar* g = nd.grad.data() + i * n;
                Scalar dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
                for (std::size_t j = 0; j < n; ++j)
                    an->grad[i * n + j] += (g[j] - y[j] * dot) * inv_norm[i];
            }
        }));
}

// ---------------------------------------------------------------------------
// gradient extraction

inline std::map<std::string, std::vector<Scalar>> gradient(
    const Tensor& loss, const std::vector<std::pair<std::string, Tensor>>& params) {
    if (!loss.all_finite()) throw TensorError("gradient: non-finite loss");
    for (const auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
    loss.backward();
    std::map<std::string, std::vector<Scalar>> out;
    for (const auto& [name, p] : params) {
        if (p.grad().empty())
            out[name] = std::vector<Scalar>(p.size(), 0.0);  // unreachable parameter
        else
            out[name] = p.grad();
    }
    return out;
}

}  // namespace vtr
