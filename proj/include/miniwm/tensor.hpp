#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "miniwm/errors.hpp"
#include "miniwm/rng.hpp"

namespace miniwm {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major tensor with value semantics. All layout logic (strides,
// broadcasting) lives in free functions below; the class itself is a shaped
// buffer.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(size_t(shape_numel(shape_)), T(0)) {}

    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (int64_t(data_.size()) != shape_numel(shape_))
            throw ShapeError("tensor data size does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

    static Tensor scalar(T v) { return Tensor({}, {v}); }

    const Shape& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return int64_t(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](int64_t i) { return data_[size_t(i)]; }
    const T& operator[](int64_t i) const { return data_[size_t(i)]; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor");
        return data_[0];
    }

    Tensor reshaped(Shape s) const& {
        Tensor out = *this;
        out.set_shape(std::move(s));
        return out;
    }
    Tensor reshaped(Shape s) && {
        set_shape(std::move(s));
        return std::move(*this);
    }

    void set_shape(Shape s) {
        if (shape_numel(s) != numel())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
        shape_ = std::move(s);
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = U(data_[size_t(i)]);
        return out;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

inline Shape row_major_strides(const Shape& s) {
    Shape st(s.size());
    int64_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// NumPy-style broadcast of two shapes; throws on incompatibility.
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `s` viewed as shape `out` (0 where broadcast).
inline Shape broadcast_strides(const Shape& s, const Shape& out) {
    Shape st = row_major_strides(s);
    Shape res(out.size(), 0);
    size_t off = out.size() - s.size();
    for (size_t i = 0; i < s.size(); ++i)
        res[off + i] = (s[i] == 1 && out[off + i] != 1) ? 0 : st[i];
    return res;
}

namespace detail {

template <class T, class F>
void binary_apply(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, F f) {
    if (a.shape() == b.shape()) {
        const T* pa = a.data();
        const T* pb = b.data();
        T* po = out.data();
        for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = f(pa[i], pb[i]);
        return;
    }
    const Shape& os = out.shape();
    Shape sa = broadcast_strides(a.shape(), os);
    Shape sb = broadcast_strides(b.shape(), os);
    size_t r = os.size();
    std::vector<int64_t> idx(r, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0, n = out.numel(); i < n; ++i) {
        out[i] = f(a[oa], b[ob]);
        for (size_t d = r; d-- > 0;) {
            idx[d]++;
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < os[d]) break;
            idx[d] = 0;
            oa -= sa[d] * os[d];
            ob -= sb[d] * os[d];
        }
    }
}

}  // namespace detail

template <class T, class F>
Tensor<T> broadcast_op(const Tensor<T>& a, const Tensor<T>& b, F f) {
    Tensor<T> out(broadcast_shapes(a.shape(), b.shape()));
    detail::binary_apply(a, b, out, f);
    return out;
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    return broadcast_op(a, b, [](T x, T y) { return x + y; });
}
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
    return broadcast_op(a, b, [](T x, T y) { return x - y; });
}
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
    return broadcast_op(a, b, [](T x, T y) { return x * y; });
}

template <class T, class F>
Tensor<T> map(const Tensor<T>& a, F f) {
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return map(a, [s](T x) { return x * s; });
}

template <class T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
    if (dst.shape() != src.shape()) throw ShapeError("add_inplace shape mismatch");
    T* pd = dst.data();
    const T* ps = src.data();
    for (int64_t i = 0, n = dst.numel(); i < n; ++i) pd[i] += ps[i];
}

template <class T>
void axpy_inplace(Tensor<T>& dst, T alpha, const Tensor<T>& src) {
    if (dst.shape() != src.shape()) throw ShapeError("axpy shape mismatch");
    T* pd = dst.data();
    const T* ps = src.data();
    for (int64_t i = 0, n = dst.numel(); i < n; ++i) pd[i] += alpha * ps[i];
}

// Sum `g` down to `target` shape (inverse of broadcasting).
template <class T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target) {
    if (g.shape() == target) return g;
    Tensor<T> out(target);
    const Shape& gs = g.shape();
    Shape st = broadcast_strides(target, gs);
    size_t r = gs.size();
    std::vector<int64_t> idx(r, 0);
    int64_t ot = 0;
    for (int64_t i = 0, n = g.numel(); i < n; ++i) {
        out[ot] += g[i];
        for (size_t d = r; d-- > 0;) {
            idx[d]++;
            ot += st[d];
            if (idx[d] < gs[d]) break;
            idx[d] = 0;
            ot -= st[d] * gs[d];
        }
    }
    return out;
}

template <class T>
T sum(const Tensor<T>& a) {
    // Pairwise-ish accumulation in long doubles is unnecessary at our sizes;
    // plain left fold keeps results deterministic.
    T acc = T(0);
    for (int64_t i = 0; i < a.numel(); ++i) acc += a[i];
    return acc;
}

template <class T>
T mean(const Tensor<T>& a) {
    if (a.numel() == 0) throw ShapeError("mean of empty tensor");
    return sum(a) / T(a.numel());
}

// C[..,M,N] = A[..,M,K] x B[..,K,N]; leading dims must match elementwise, or
// either side may omit them entirely (shared operand).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul needs rank >= 2");
    int64_t M = a.dim(a.rank() - 2), K = a.dim(a.rank() - 1);
    int64_t Kb = b.dim(b.rank() - 2), N = b.dim(b.rank() - 1);
    if (K != Kb)
        throw ShapeError("matmul inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Shape batch_a(a.shape().begin(), a.shape().end() - 2);
    Shape batch_b(b.shape().begin(), b.shape().end() - 2);
    Shape batch;
    if (batch_a == batch_b)
        batch = batch_a;
    else if (batch_b.empty())
        batch = batch_a;
    else if (batch_a.empty())
        batch = batch_b;
    else
        throw ShapeError("matmul batch dims mismatch");
    int64_t nb = shape_numel(batch);

    Shape out_shape = batch;
    out_shape.push_back(M);
    out_shape.push_back(N);
    Tensor<T> out(out_shape);

    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat>;
    using MMap = Eigen::Map<Mat>;
    int64_t stride_a = batch_a.empty() ? 0 : M * K;
    int64_t stride_b = batch_b.empty() ? 0 : K * N;
    for (int64_t i = 0; i < nb; ++i) {
        CMap ma(a.data() + i * stride_a, M, K);
        CMap mb(b.data() + i * stride_b, K, N);
        MMap mo(out.data() + i * M * N, M, N);
        mo.noalias() = ma * mb;
    }
    return out;
}

template <class T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
    if (a.rank() < 2) throw ShapeError("transpose needs rank >= 2");
    Shape s = a.shape();
    int64_t M = s[s.size() - 2], N = s[s.size() - 1];
    std::swap(s[s.size() - 2], s[s.size() - 1]);
    Tensor<T> out(s);
    int64_t nb = a.numel() / (M * N);
    for (int64_t b = 0; b < nb; ++b) {
        const T* pa = a.data() + b * M * N;
        T* po = out.data() + b * M * N;
        for (int64_t i = 0; i < M; ++i)
            for (int64_t j = 0; j < N; ++j) po[j * M + i] = pa[i * N + j];
    }
    return out;
}

// General axis permutation (copying).
template <class T>
Tensor<T> permuted(const Tensor<T>& a, const std::vector<size_t>& perm) {
    if (perm.size() != a.rank()) throw ShapeError("permute rank mismatch");
    Shape os(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) os[i] = a.shape()[perm[i]];
    Tensor<T> out(os);
    Shape ist = row_major_strides(a.shape());
    size_t r = os.size();
    std::vector<int64_t> idx(r, 0);
    int64_t src = 0;
    std::vector<int64_t> pst(r);
    for (size_t i = 0; i < r; ++i) pst[i] = ist[perm[i]];
    for (int64_t i = 0, n = out.numel(); i < n; ++i) {
        out[i] = a[src];
        for (size_t d = r; d-- > 0;) {
            idx[d]++;
            src += pst[d];
            if (idx[d] < os[d]) break;
            idx[d] = 0;
            src -= pst[d] * os[d];
        }
    }
    return out;
}

template <class T>
std::vector<size_t> inverse_perm(const std::vector<size_t>& perm) {
    std::vector<size_t> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    return inv;
}

template <class T>
Tensor<T> random_normal(Shape shape, Rng& rng, T std_dev = T(1), T mean_v = T(0)) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal()) * std_dev + mean_v;
    return t;
}

template <class T>
Tensor<T> random_uniform(Shape shape, Rng& rng, T lo = T(0), T hi = T(1)) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform(double(lo), double(hi)));
    return t;
}

}  // namespace miniwm
