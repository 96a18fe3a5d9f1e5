#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace saldet {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

namespace detail {

// Fixed 64-byte alignment for tensor buffers. Compilers vectorize reduction
// loops with alignment-dependent peel/remainder splits, so an unaligned
// heap buffer would make summation order (and thus the last ulp of results)
// depend on allocator history. Pinning alignment makes every computation a
// pure function of shapes and values, which the reproducibility tests rely on.
template <class T, std::size_t A>
struct AlignedAllocator {
    using value_type = T;

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U, A>&) noexcept {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(A)));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(A)); }

    template <class U>
    struct rebind {
        using other = AlignedAllocator<U, A>;
    };

    friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
    friend bool operator!=(const AlignedAllocator&, const AlignedAllocator&) { return false; }
};

} // namespace detail

using AlignedVec = std::vector<double, detail::AlignedAllocator<double, 64>>;

// Dense row-major double tensor. Rank 0 (scalar) through rank 4 is all the
// model needs; storage is a flat contiguous 64-byte-aligned buffer.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0);
    }

    Tensor(Shape shape, const std::vector<double>& data) : shape_(std::move(shape)) {
        validate_shape();
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape_))
            throw std::invalid_argument("Tensor: data size " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape_));
        data_.assign(data.begin(), data.end());
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    static Tensor row(std::vector<double> v) {
        int n = static_cast<int>(v.size());
        return Tensor({n}, std::move(v));
    }

    int ndim() const { return static_cast<int>(shape_.size()); }
    const Shape& shape() const { return shape_; }
    int size(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    AlignedVec& vec() { return data_; }
    const AlignedVec& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& operator()(int i) { return data_[static_cast<size_t>(i)]; }
    double operator()(int i) const { return data_[static_cast<size_t>(i)]; }
    double& operator()(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double operator()(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double& operator()(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    double item() const {
        if (data_.size() != 1)
            throw std::invalid_argument("Tensor::item: tensor has shape " + shape_str(shape_));
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    void validate_shape() const {
        for (int d : shape_)
            if (d <= 0)
                throw std::invalid_argument("Tensor: non-positive dimension in shape " + shape_str(shape_));
    }

    Shape shape_;
    AlignedVec data_;
};

// ---- broadcasting --------------------------------------------------------

// NumPy-style trailing alignment: dims must match or be 1.
inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    size_t n = std::max(a.size(), b.size());
    Shape out(n, 1);
    for (size_t i = 0; i < n; ++i) {
        int da = i < n - a.size() ? 1 : a[i - (n - a.size())];
        int db = i < n - b.size() ? 1 : b[i - (n - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                        shape_str(b) + " are not broadcastable");
        out[i] = std::max(da, db);
    }
    return out;
}

namespace detail {

// Strides (in elements) of `shape` when broadcast up to `out`; broadcast axes get stride 0.
inline std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
    std::vector<std::int64_t> st(out.size(), 0);
    std::int64_t acc = 1;
    size_t off = out.size() - shape.size();
    for (size_t i = shape.size(); i-- > 0;) {
        st[i + off] = (shape[i] == 1 && out[i + off] != 1) ? 0 : acc;
        acc *= shape[i];
    }
    return st;
}

} // namespace detail

template <class F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* op, F f) {
    if (a.same_shape(b)) { // fast path, no stride bookkeeping
        Tensor out(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    Shape os = broadcast_shapes(a.shape(), b.shape(), op);
    Tensor out(os);
    auto sa = detail::broadcast_strides(a.shape(), os);
    auto sb = detail::broadcast_strides(b.shape(), os);
    size_t nd = os.size();
    std::vector<int> idx(nd, 0);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    std::int64_t n = out.numel();
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        po[i] = f(pa[ia], pb[ib]);
        for (size_t d = nd; d-- > 0;) {
            if (++idx[d] < os[d]) {
                ia += sa[d];
                ib += sb[d];
                break;
            }
            idx[d] = 0;
            ia -= sa[d] * (os[d] - 1);
            ib -= sb[d] * (os[d] - 1);
        }
    }
    return out;
}

// Sum `g` down to `target` shape (inverse of broadcasting); used by backward rules.
inline Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    Tensor out(target.empty() ? Shape{} : target);
    if (target.empty()) {
        double s = 0;
        for (std::int64_t i = 0; i < g.numel(); ++i) s += g[i];
        out[0] = s;
        return out;
    }
    auto st = detail::broadcast_strides(target, g.shape());
    size_t nd = g.shape().size();
    std::vector<int> idx(nd, 0);
    const Shape& gs = g.shape();
    std::int64_t it = 0;
    for (std::int64_t i = 0; i < g.numel(); ++i) {
        out[it] += g[i];
        for (size_t d = nd; d-- > 0;) {
            if (++idx[d] < gs[d]) {
                it += st[d];
                break;
            }
            idx[d] = 0;
            it -= st[d] * (gs[d] - 1);
        }
    }
    return out;
}

// ---- dense linear algebra (Eigen-backed) ---------------------------------

namespace detail {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;
} // namespace detail

// 2-D matrix product with optional transposes: op(a) @ op(b).
inline Tensor matmul2d(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw std::invalid_argument("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    int am = ta ? a.size(1) : a.size(0);
    int ak = ta ? a.size(0) : a.size(1);
    int bk = tb ? b.size(1) : b.size(0);
    int bn = tb ? b.size(0) : b.size(1);
    if (ak != bk)
        throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                    (ta ? "^T" : "") + " vs " + shape_str(b.shape()) + (tb ? "^T" : ""));
    Tensor out({am, bn});
    detail::ECMap ma(a.data(), a.size(0), a.size(1));
    detail::ECMap mb(b.data(), b.size(0), b.size(1));
    detail::EMap mo(out.data(), am, bn);
    if (!ta && !tb)
        mo.noalias() = ma * mb;
    else if (ta && !tb)
        mo.noalias() = ma.transpose() * mb;
    else if (!ta && tb)
        mo.noalias() = ma * mb.transpose();
    else
        mo.noalias() = ma.transpose() * mb.transpose();
    return out;
}

// Batched 3-D matrix product over the leading axis.
inline Tensor bmm3d(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.size(0) != b.size(0))
        throw std::invalid_argument("bmm: expected rank-3 operands with equal batch, got " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
    int batch = a.size(0);
    int am = ta ? a.size(2) : a.size(1);
    int ak = ta ? a.size(1) : a.size(2);
    int bk = tb ? b.size(2) : b.size(1);
    int bn = tb ? b.size(1) : b.size(2);
    if (ak != bk)
        throw std::invalid_argument("bmm: inner dimensions disagree, " + shape_str(a.shape()) +
                                    (ta ? "^T" : "") + " vs " + shape_str(b.shape()) + (tb ? "^T" : ""));
    Tensor out({batch, am, bn});
    std::int64_t stra = static_cast<std::int64_t>(a.size(1)) * a.size(2);
    std::int64_t strb = static_cast<std::int64_t>(b.size(1)) * b.size(2);
    std::int64_t stro = static_cast<std::int64_t>(am) * bn;
    for (int h = 0; h < batch; ++h) {
        detail::ECMap ma(a.data() + h * stra, a.size(1), a.size(2));
        detail::ECMap mb(b.data() + h * strb, b.size(1), b.size(2));
        detail::EMap mo(out.data() + h * stro, am, bn);
        if (!ta && !tb)
            mo.noalias() = ma * mb;
        else if (ta && !tb)
            mo.noalias() = ma.transpose() * mb;
        else if (!ta && tb)
            mo.noalias() = ma * mb.transpose();
        else
            mo.noalias() = ma.transpose() * mb.transpose();
    }
    return out;
}

} // namespace saldet
