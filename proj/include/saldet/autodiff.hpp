#pragma once

#include "saldet/tensor.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace saldet {

// Eager reverse-mode automatic differentiation over Tensor values. Each op
// computes its value immediately and records a closure that routes the output
// gradient to its parents. Graphs are plain shared_ptr DAGs: no global tape,
// so independent graphs are isolated and construction order inside one graph
// fully determines the (deterministic) backward order.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_allocated = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad() {
        if (!grad_allocated) {
            grad = Tensor(value.shape());
            grad_allocated = true;
        }
        return grad;
    }
};

using Var = std::shared_ptr<Node>;

inline Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->op = "constant";
    return n;
}

inline Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

// Trainable/differentiable input.
inline Var leaf(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->ensure_grad();
    return n;
}

namespace detail {

inline Var make_op(const char* name, Tensor value, std::vector<Var> parents,
                   std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = name;
    for (const Var& p : parents)
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward);
    }
    return n;
}

inline void accumulate(const Var& p, const Tensor& g) {
    if (!p->requires_grad) return;
    Tensor r = reduce_to_shape(g, p->value.shape());
    Tensor& dst = p->ensure_grad();
    double* d = dst.data();
    const double* s = r.data();
    std::int64_t n = dst.numel();
    for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
}

} // namespace detail

// Runs reverse-mode accumulation from a scalar root. Topological order is a
// deterministic iterative post-order DFS following recorded parent order.
inline void backward(const Var& root) {
    if (root->value.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar, got shape " + shape_str(root->value.shape()));
    if (!root->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    Tensor& rg = root->ensure_grad();
    rg[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---- arithmetic ------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    Tensor v = broadcast_binary(a->value, b->value, "add", [](double x, double y) { return x + y; });
    return detail::make_op("add", std::move(v), {a, b}, [](Node& n) {
        detail::accumulate(n.parents[0], n.grad);
        detail::accumulate(n.parents[1], n.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    Tensor v = broadcast_binary(a->value, b->value, "sub", [](double x, double y) { return x - y; });
    return detail::make_op("sub", std::move(v), {a, b}, [](Node& n) {
        detail::accumulate(n.parents[0], n.grad);
        Tensor neg(n.grad.shape());
        for (std::int64_t i = 0; i < neg.numel(); ++i) neg[i] = -n.grad[i];
        detail::accumulate(n.parents[1], neg);
    });
}

inline Var mul(const Var& a, const Var& b) {
    Tensor v = broadcast_binary(a->value, b->value, "mul", [](double x, double y) { return x * y; });
    return detail::make_op("mul", std::move(v), {a, b}, [](Node& n) {
        detail::accumulate(n.parents[0],
                           broadcast_binary(n.grad, n.parents[1]->value, "mul_bw", [](double g, double y) { return g * y; }));
        detail::accumulate(n.parents[1],
                           broadcast_binary(n.grad, n.parents[0]->value, "mul_bw", [](double g, double x) { return g * x; }));
    });
}

inline Var vdiv(const Var& a, const Var& b) {
    Tensor v = broadcast_binary(a->value, b->value, "div", [](double x, double y) { return x / y; });
    return detail::make_op("div", std::move(v), {a, b}, [](Node& n) {
        detail::accumulate(n.parents[0],
                           broadcast_binary(n.grad, n.parents[1]->value, "div_bw", [](double g, double y) { return g / y; }));
        Tensor gb = broadcast_binary(n.grad, n.value, "div_bw", [](double g, double q) { return -g * q; });
        detail::accumulate(n.parents[1],
                           broadcast_binary(gb, n.parents[1]->value, "div_bw", [](double g, double y) { return g / y; }));
    });
}

inline Var neg(const Var& a) {
    Tensor v(a->value.shape());
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = -a->value[i];
    return detail::make_op("neg", std::move(v), {a}, [](Node& n) {
        Tensor g(n.grad.shape());
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = -n.grad[i];
        detail::accumulate(n.parents[0], g);
    });
}

inline Var scale(const Var& a, double c) {
    Tensor v(a->value.shape());
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = c * a->value[i];
    return detail::make_op("scale", std::move(v), {a}, [c](Node& n) {
        Tensor g(n.grad.shape());
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = c * n.grad[i];
        detail::accumulate(n.parents[0], g);
    });
}

inline Var add_scalar(const Var& a, double c) {
    Tensor v(a->value.shape());
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] + c;
    return detail::make_op("add_scalar", std::move(v), {a},
                           [](Node& n) { detail::accumulate(n.parents[0], n.grad); });
}

// c - a, handy for (1 - p) style terms.
inline Var rsub_scalar(double c, const Var& a) {
    Tensor v(a->value.shape());
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = c - a->value[i];
    return detail::make_op("rsub_scalar", std::move(v), {a}, [](Node& n) {
        Tensor g(n.grad.shape());
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = -n.grad[i];
        detail::accumulate(n.parents[0], g);
    });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// ---- elementwise nonlinearities --------------------------------------------

namespace detail {

template <class FwdF, class BwdF>
Var unary_op(const char* name, const Var& a, FwdF f, BwdF dfdx_from_xy) {
    Tensor v(a->value.shape());
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = f(a->value[i]);
    return make_op(name, std::move(v), {a}, [dfdx_from_xy](Node& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor g(n.grad.shape());
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * dfdx_from_xy(x[i], n.value[i]);
        accumulate(n.parents[0], g);
    });
}

} // namespace detail

inline Var sigmoid(const Var& a) {
    return detail::unary_op(
        "sigmoid", a,
        [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
    return detail::unary_op("tanh", a, [](double x) { return std::tanh(x); },
                            [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& a) {
    return detail::unary_op("relu", a, [](double x) { return x > 0 ? x : 0.0; },
                            [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var softplus(const Var& a) {
    return detail::unary_op(
        "softplus", a,
        [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
}

inline Var exp(const Var& a) {
    return detail::unary_op("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
    return detail::unary_op("log", a, [](double x) { return std::log(x); },
                            [](double x, double) { return 1.0 / x; });
}

inline Var abs(const Var& a) {
    return detail::unary_op("abs", a, [](double x) { return std::fabs(x); },
                            [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

// x^e for a fixed exponent; intended for non-negative x (focal modulation).
inline Var pow_scalar(const Var& a, double e) {
    return detail::unary_op("pow_scalar", a, [e](double x) { return std::pow(x, e); },
                            [e](double x, double) { return x == 0.0 && e >= 1.0 ? 0.0 : e * std::pow(x, e - 1.0); });
}

// Elementwise min/max with broadcasting; ties route the gradient to the first
// operand (fixed subgradient choice, keeps backward deterministic).
inline Var minimum(const Var& a, const Var& b) {
    Tensor v = broadcast_binary(a->value, b->value, "minimum", [](double x, double y) { return x <= y ? x : y; });
    return detail::make_op("minimum", std::move(v), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        Tensor mask = broadcast_binary(av, bv, "minimum_bw", [](double x, double y) { return x <= y ? 1.0 : 0.0; });
        detail::accumulate(n.parents[0],
                           broadcast_binary(n.grad, mask, "minimum_bw", [](double g, double m) { return g * m; }));
        detail::accumulate(n.parents[1],
                           broadcast_binary(n.grad, mask, "minimum_bw", [](double g, double m) { return g * (1.0 - m); }));
    });
}

inline Var maximum(const Var& a, const Var& b) {
    Tensor v = broadcast_binary(a->value, b->value, "maximum", [](double x, double y) { return x >= y ? x : y; });
    return detail::make_op("maximum", std::move(v), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        Tensor mask = broadcast_binary(av, bv, "maximum_bw", [](double x, double y) { return x >= y ? 1.0 : 0.0; });
        detail::accumulate(n.parents[0],
                           broadcast_binary(n.grad, mask, "maximum_bw", [](double g, double m) { return g * m; }));
        detail::accumulate(n.parents[1],
                           broadcast_binary(n.grad, mask, "maximum_bw", [](double g, double m) { return g * (1.0 - m); }));
    });
}

// ---- matrix products -------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    Tensor v = matmul2d(a->value, b->value);
    return detail::make_op("matmul", std::move(v), {a, b}, [](Node& n) {
        detail::accumulate(n.parents[0], matmul2d(n.grad, n.parents[1]->value, false, true));
        detail::accumulate(n.parents[1], matmul2d(n.parents[0]->value, n.grad, true, false));
    });
}

// Batched product over the leading axis with optional operand transposes.
inline Var bmm(const Var& a, const Var& b, bool ta = false, bool tb = false) {
    Tensor v = bmm3d(a->value, b->value, ta, tb);
    return detail::make_op("bmm", std::move(v), {a, b}, [ta, tb](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        Tensor ga = !ta ? bmm3d(n.grad, bv, false, !tb) : bmm3d(bv, n.grad, tb, true);
        Tensor gb = !tb ? bmm3d(av, n.grad, !ta, false) : bmm3d(n.grad, av, true, ta);
        detail::accumulate(n.parents[0], ga);
        detail::accumulate(n.parents[1], gb);
    });
}

inline Var transpose(const Var& a) {
    if (a->value.ndim() != 2)
        throw std::invalid_argument("transpose: expected rank-2, got " + shape_str(a->value.shape()));
    int r = a->value.size(0), c = a->value.size(1);
    Tensor v({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) v(j, i) = a->value(i, j);
    return detail::make_op("transpose", std::move(v), {a}, [r, c](Node& n) {
        Tensor g({r, c});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) g(i, j) = n.grad(j, i);
        detail::accumulate(n.parents[0], g);
    });
}

// ---- reductions ------------------------------------------------------------

inline Var sum(const Var& a) {
    double s = 0;
    for (std::int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    return detail::make_op("sum", Tensor::scalar(s), {a}, [](Node& n) {
        Tensor g = Tensor::full(n.parents[0]->value.shape(), n.grad[0]);
        detail::accumulate(n.parents[0], g);
    });
}

inline Var mean(const Var& a) {
    std::int64_t cnt = a->value.numel();
    double s = 0;
    for (std::int64_t i = 0; i < cnt; ++i) s += a->value[i];
    return detail::make_op("mean", Tensor::scalar(s / static_cast<double>(cnt)), {a}, [cnt](Node& n) {
        Tensor g = Tensor::full(n.parents[0]->value.shape(), n.grad[0] / static_cast<double>(cnt));
        detail::accumulate(n.parents[0], g);
    });
}

// ---- shape ops ---------------------------------------------------------------

inline Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no operands");
    const Shape& s0 = parts[0]->value.shape();
    int nd = static_cast<int>(s0.size());
    if (axis < 0 || axis >= nd) throw std::invalid_argument("concat: axis out of range");
    Shape out_shape = s0;
    int total = 0;
    for (const Var& p : parts) {
        const Shape& s = p->value.shape();
        if (static_cast<int>(s.size()) != nd)
            throw std::invalid_argument("concat: rank mismatch");
        for (int d = 0; d < nd; ++d)
            if (d != axis && s[d] != s0[d])
                throw std::invalid_argument("concat: shapes " + shape_str(s0) + " and " + shape_str(s) +
                                            " disagree off-axis");
        total += s[axis];
    }
    out_shape[axis] = total;

    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s0[d];
    for (int d = axis + 1; d < nd; ++d) inner *= s0[d];

    Tensor v(out_shape);
    std::int64_t row = static_cast<std::int64_t>(total) * inner;
    std::int64_t off = 0;
    for (const Var& p : parts) {
        std::int64_t span = static_cast<std::int64_t>(p->value.size(axis)) * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(p->value.data() + o * span, p->value.data() + (o + 1) * span, v.data() + o * row + off);
        off += span;
    }
    return detail::make_op("concat", std::move(v), parts, [outer, inner, row](Node& n) {
        std::int64_t off2 = 0;
        for (auto& p : n.parents) {
            std::int64_t span = 1;
            // span = size along axis * inner; recover from parent numel / outer
            span = p->value.numel() / outer;
            if (p->requires_grad) {
                Tensor g(p->value.shape());
                for (std::int64_t o = 0; o < outer; ++o)
                    std::copy(n.grad.data() + o * row + off2, n.grad.data() + o * row + off2 + span,
                              g.data() + o * span);
                detail::accumulate(p, g);
            }
            off2 += span;
        }
        (void)inner;
    });
}

inline Var slice(const Var& a, int axis, int start, int len) {
    const Shape& s = a->value.shape();
    int nd = static_cast<int>(s.size());
    if (axis < 0 || axis >= nd) throw std::invalid_argument("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > s[axis])
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                    ") out of bounds for axis size " + std::to_string(s[axis]));
    Shape out_shape = s;
    out_shape[axis] = len;
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s[d];
    for (int d = axis + 1; d < nd; ++d) inner *= s[d];
    std::int64_t src_row = static_cast<std::int64_t>(s[axis]) * inner;
    std::int64_t dst_row = static_cast<std::int64_t>(len) * inner;
    std::int64_t off = static_cast<std::int64_t>(start) * inner;

    Tensor v(out_shape);
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy(a->value.data() + o * src_row + off, a->value.data() + o * src_row + off + dst_row,
                  v.data() + o * dst_row);
    return detail::make_op("slice", std::move(v), {a}, [outer, src_row, dst_row, off](Node& n) {
        Tensor g(n.parents[0]->value.shape());
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(n.grad.data() + o * dst_row, n.grad.data() + (o + 1) * dst_row, g.data() + o * src_row + off);
        detail::accumulate(n.parents[0], g);
    });
}

// Rows of `a` selected by index (first axis); duplicate indices accumulate in
// backward.
inline Var gather_rows(const Var& a, std::vector<int> idx) {
    const Shape& s = a->value.shape();
    if (s.empty()) throw std::invalid_argument("gather_rows: scalar operand");
    std::int64_t inner = a->value.numel() / s[0];
    for (int i : idx)
        if (i < 0 || i >= s[0])
            throw std::invalid_argument("gather_rows: index " + std::to_string(i) + " out of range for axis size " +
                                        std::to_string(s[0]));
    Shape out_shape = s;
    out_shape[0] = static_cast<int>(idx.size());
    Tensor v(out_shape);
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(a->value.data() + idx[r] * inner, a->value.data() + (idx[r] + 1) * inner,
                  v.data() + static_cast<std::int64_t>(r) * inner);
    return detail::make_op("gather_rows", std::move(v), {a}, [idx, inner](Node& n) {
        Tensor g(n.parents[0]->value.shape());
        for (size_t r = 0; r < idx.size(); ++r) {
            const double* src = n.grad.data() + static_cast<std::int64_t>(r) * inner;
            double* dst = g.data() + idx[r] * inner;
            for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
        detail::accumulate(n.parents[0], g);
    });
}

// [n, h*c] -> [h, n, c]: per-head views of packed head channels.
inline Var split_heads(const Var& a, int heads) {
    if (a->value.ndim() != 2 || a->value.size(1) % heads != 0)
        throw std::invalid_argument("split_heads: shape " + shape_str(a->value.shape()) +
                                    " not divisible into " + std::to_string(heads) + " heads");
    int n = a->value.size(0), hc = a->value.size(1) / heads;
    Tensor v({heads, n, hc});
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i)
            std::copy(a->value.data() + (static_cast<std::int64_t>(i) * heads + h) * hc,
                      a->value.data() + (static_cast<std::int64_t>(i) * heads + h + 1) * hc,
                      v.data() + ((static_cast<std::int64_t>(h) * n) + i) * hc);
    return detail::make_op("split_heads", std::move(v), {a}, [heads, n, hc](Node& n_) {
        Tensor g({n, heads * hc});
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < n; ++i)
                std::copy(n_.grad.data() + ((static_cast<std::int64_t>(h) * n) + i) * hc,
                          n_.grad.data() + ((static_cast<std::int64_t>(h) * n) + i + 1) * hc,
                          g.data() + (static_cast<std::int64_t>(i) * heads + h) * hc);
        detail::accumulate(n_.parents[0], g);
    });
}

// [h, n, c] -> [n, h*c]: inverse of split_heads.
inline Var merge_heads(const Var& a) {
    if (a->value.ndim() != 3)
        throw std::invalid_argument("merge_heads: expected rank-3, got " + shape_str(a->value.shape()));
    int heads = a->value.size(0), n = a->value.size(1), hc = a->value.size(2);
    Tensor v({n, heads * hc});
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i)
            std::copy(a->value.data() + ((static_cast<std::int64_t>(h) * n) + i) * hc,
                      a->value.data() + ((static_cast<std::int64_t>(h) * n) + i + 1) * hc,
                      v.data() + (static_cast<std::int64_t>(i) * heads + h) * hc);
    return detail::make_op("merge_heads", std::move(v), {a}, [heads, n, hc](Node& n_) {
        Tensor g({heads, n, hc});
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < n; ++i)
                std::copy(n_.grad.data() + (static_cast<std::int64_t>(i) * heads + h) * hc,
                          n_.grad.data() + (static_cast<std::int64_t>(i) * heads + h + 1) * hc,
                          g.data() + ((static_cast<std::int64_t>(h) * n) + i) * hc);
        detail::accumulate(n_.parents[0], g);
    });
}

// ---- structured ops ----------------------------------------------------------

// Numerically stable softmax over the last axis of any rank.
inline Var softmax_last(const Var& a) {
    const Shape& s = a->value.shape();
    if (s.empty()) throw std::invalid_argument("softmax_last: scalar operand");
    std::int64_t last = s.back();
    std::int64_t rows = a->value.numel() / last;
    Tensor v(s);
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = a->value.data() + r * last;
        double* y = v.data() + r * last;
        double mx = x[0];
        for (std::int64_t i = 1; i < last; ++i) mx = std::max(mx, x[i]);
        double z = 0;
        for (std::int64_t i = 0; i < last; ++i) {
            y[i] = std::exp(x[i] - mx);
            z += y[i];
        }
        for (std::int64_t i = 0; i < last; ++i) y[i] /= z;
    }
    return detail::make_op("softmax", std::move(v), {a}, [rows, last](Node& n) {
        Tensor g(n.value.shape());
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = n.value.data() + r * last;
            const double* go = n.grad.data() + r * last;
            double* gi = g.data() + r * last;
            double dot = 0;
            for (std::int64_t i = 0; i < last; ++i) dot += go[i] * y[i];
            for (std::int64_t i = 0; i < last; ++i) gi[i] = y[i] * (go[i] - dot);
        }
        detail::accumulate(n.parents[0], g);
    });
}

// LayerNorm over the last axis with learned gain/bias.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
    const Shape& s = x->value.shape();
    if (s.empty()) throw std::invalid_argument("layer_norm: scalar operand");
    std::int64_t last = s.back();
    if (gamma->value.numel() != last || beta->value.numel() != last)
        throw std::invalid_argument("layer_norm: gain/bias length must equal last axis " + std::to_string(last));
    std::int64_t rows = x->value.numel() / last;

    Tensor v(s);
    Tensor xhat(s);
    std::vector<double> inv_std(static_cast<size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xp = x->value.data() + r * last;
        double mu = 0;
        for (std::int64_t i = 0; i < last; ++i) mu += xp[i];
        mu /= static_cast<double>(last);
        double var = 0;
        for (std::int64_t i = 0; i < last; ++i) var += (xp[i] - mu) * (xp[i] - mu);
        var /= static_cast<double>(last);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = is;
        for (std::int64_t i = 0; i < last; ++i) {
            double xh = (xp[i] - mu) * is;
            xhat.data()[r * last + i] = xh;
            v.data()[r * last + i] = xh * gamma->value[i] + beta->value[i];
        }
    }
    return detail::make_op("layer_norm", std::move(v), {x, gamma, beta},
                           [rows, last, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
        const Tensor& gmv = n.parents[1]->value;
        Tensor gx(n.parents[0]->value.shape());
        Tensor ggamma(n.parents[1]->value.shape());
        Tensor gbeta(n.parents[2]->value.shape());
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* go = n.grad.data() + r * last;
            const double* xh = xhat.data() + r * last;
            double* gxp = gx.data() + r * last;
            double mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (std::int64_t i = 0; i < last; ++i) {
                double dxh = go[i] * gmv[i];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xh[i];
                ggamma[i] += go[i] * xh[i];
                gbeta[i] += go[i];
            }
            mean_dxhat /= static_cast<double>(last);
            mean_dxhat_xhat /= static_cast<double>(last);
            double is = inv_std[static_cast<size_t>(r)];
            for (std::int64_t i = 0; i < last; ++i) {
                double dxh = go[i] * gmv[i];
                gxp[i] = is * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
            }
        }
        detail::accumulate(n.parents[0], gx);
        detail::accumulate(n.parents[1], ggamma);
        detail::accumulate(n.parents[2], gbeta);
    });
}

// Barrier: value flows, gradient does not.
inline Var stop_gradient(const Var& a) {
    auto n = std::make_shared<Node>();
    n->value = a->value;
    n->op = "stop_gradient";
    return n;
}

// ---- fused spatial Gaussian -------------------------------------------------
//
// Per-head axis-separable Gaussian over a token grid:
//   out[h,n,k] = exp(-((xs[k]-cx)/vx)^2 - ((ys[k]-cy)/vy)^2)
// with cx = centers[n, 2h], cy = centers[n, 2h+1] and likewise for scales.
// Scales must be nonzero; callers keep them positive and bounded away from 0.
inline Var gaussian_grid_map(const Var& centers, const Var& scales, Tensor xs, Tensor ys) {
    const Shape& cs = centers->value.shape();
    if (cs.size() != 2 || cs[1] % 2 != 0 || !centers->value.same_shape(scales->value))
        throw std::invalid_argument("gaussian_grid_map: centers/scales must share shape [n, 2*heads], got " +
                                    shape_str(cs) + " and " + shape_str(scales->value.shape()));
    if (xs.ndim() != 1 || ys.ndim() != 1 || xs.size(0) != ys.size(0))
        throw std::invalid_argument("gaussian_grid_map: xs/ys must be equal-length vectors");
    int n = cs[0], heads = cs[1] / 2, k = xs.size(0);
    Tensor v({heads, n, k});
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i) {
            double cx = centers->value(i, 2 * h), cy = centers->value(i, 2 * h + 1);
            double vx = scales->value(i, 2 * h), vy = scales->value(i, 2 * h + 1);
            double* row = v.data() + (static_cast<std::int64_t>(h) * n + i) * k;
            for (int j = 0; j < k; ++j) {
                double dx = (xs[j] - cx) / vx;
                double dy = (ys[j] - cy) / vy;
                row[j] = std::exp(-dx * dx - dy * dy);
            }
        }
    return detail::make_op("gaussian_grid_map", std::move(v), {centers, scales},
                           [xs = std::move(xs), ys = std::move(ys), n, heads, k](Node& nd) {
        Tensor gc(nd.parents[0]->value.shape());
        Tensor gv(nd.parents[1]->value.shape());
        const Tensor& cen = nd.parents[0]->value;
        const Tensor& sc = nd.parents[1]->value;
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < n; ++i) {
                double cx = cen(i, 2 * h), cy = cen(i, 2 * h + 1);
                double vx = sc(i, 2 * h), vy = sc(i, 2 * h + 1);
                const double* row = nd.value.data() + (static_cast<std::int64_t>(h) * n + i) * k;
                const double* gr = nd.grad.data() + (static_cast<std::int64_t>(h) * n + i) * k;
                double acx = 0, acy = 0, avx = 0, avy = 0;
                for (int j = 0; j < k; ++j) {
                    double dx = (xs[j] - cx) / vx;
                    double dy = (ys[j] - cy) / vy;
                    double gg = gr[j] * row[j];
                    acx += gg * 2.0 * dx / vx;
                    acy += gg * 2.0 * dy / vy;
                    avx += gg * 2.0 * dx * dx / vx;
                    avy += gg * 2.0 * dy * dy / vy;
                }
                gc(i, 2 * h) += acx;
                gc(i, 2 * h + 1) += acy;
                gv(i, 2 * h) += avx;
                gv(i, 2 * h + 1) += avy;
            }
        detail::accumulate(nd.parents[0], gc);
        detail::accumulate(nd.parents[1], gv);
    });
}

} // namespace saldet
