#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "miniwm/tensor.hpp"

namespace miniwm {

// Reverse-mode autodiff on a per-step tape. Graphs are rebuilt every step;
// nodes hold dense values and lazily allocated gradients. Ops whose inputs
// all have requires_grad=false record no backward closure, so inference
// reuses the same code paths at ~forward cost.
template <class T>
class Tape;

template <class T>
struct Val {
    Tape<T>* tape = nullptr;
    int32_t id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape<T>&, const Tensor<T>&)>;

    Val<T> leaf(Tensor<T> value, bool requires_grad = false) {
        return {this, make(std::move(value), requires_grad, nullptr)};
    }

    Val<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    int32_t make(Tensor<T> value, bool rg, BackwardFn bwd) {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), rg ? std::move(bwd) : nullptr, rg});
        return int32_t(nodes_.size() - 1);
    }

    // For ops whose backward needs the node's own id (e.g. softmax reads its
    // own output); only meaningful right after make().
    void set_backward(int32_t id, BackwardFn bwd) {
        Node& n = nodes_[size_t(id)];
        if (n.requires_grad) n.backward = std::move(bwd);
    }

    const Tensor<T>& val(Val<T> v) const { return nodes_[size_t(v.id)].value; }
    const Tensor<T>& val(int32_t id) const { return nodes_[size_t(id)].value; }
    bool rg(Val<T> v) const { return nodes_[size_t(v.id)].requires_grad; }

    const Tensor<T>& grad(Val<T> v) const {
        const Node& n = nodes_[size_t(v.id)];
        if (n.grad.empty()) {
            static thread_local Tensor<T> zero;
            zero = Tensor<T>::zeros(n.value.shape());
            return zero;
        }
        return n.grad;
    }

    void acc(int32_t id, Tensor<T>&& g) {
        Node& n = nodes_[size_t(id)];
        if (!n.requires_grad) return;
        if (n.grad.empty())
            n.grad = std::move(g);
        else
            add_inplace(n.grad, g);
    }

    void backward(Val<T> root) {
        Node& r = nodes_[size_t(root.id)];
        if (r.value.numel() != 1) throw ShapeError("backward root must be scalar");
        if (!r.requires_grad) return;
        r.grad = Tensor<T>::ones(r.value.shape());
        for (int32_t id = root.id; id >= 0; --id) {
            Node& n = nodes_[size_t(id)];
            if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
        }
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        BackwardFn backward;
        bool requires_grad;
    };
    std::vector<Node> nodes_;
};

namespace ops {

template <class T>
Val<T> binary(Val<T> a, Val<T> b, Tensor<T> out,
              std::function<void(Tape<T>&, const Tensor<T>&, int32_t, int32_t)> bwd) {
    Tape<T>& tp = *a.tape;
    bool rg = tp.rg(a) || tp.rg(b);
    int32_t ia = a.id, ib = b.id;
    auto fn = [ia, ib, bwd = std::move(bwd)](Tape<T>& t, const Tensor<T>& g) { bwd(t, g, ia, ib); };
    return {&tp, tp.make(std::move(out), rg, std::move(fn))};
}

}  // namespace ops

template <class T>
Val<T> operator+(Val<T> a, Val<T> b) {
    Tape<T>& tp = *a.tape;
    Shape sa = tp.val(a).shape(), sb = tp.val(b).shape();
    return ops::binary<T>(a, b, tp.val(a) + tp.val(b),
                          [sa, sb](Tape<T>& t, const Tensor<T>& g, int32_t ia, int32_t ib) {
                              t.acc(ia, reduce_to_shape(g, sa));
                              t.acc(ib, reduce_to_shape(g, sb));
                          });
}

template <class T>
Val<T> operator-(Val<T> a, Val<T> b) {
    Tape<T>& tp = *a.tape;
    Shape sa = tp.val(a).shape(), sb = tp.val(b).shape();
    return ops::binary<T>(a, b, tp.val(a) - tp.val(b),
                          [sa, sb](Tape<T>& t, const Tensor<T>& g, int32_t ia, int32_t ib) {
                              t.acc(ia, reduce_to_shape(g, sa));
                              t.acc(ib, reduce_to_shape(scale(g, T(-1)), sb));
                          });
}

template <class T>
Val<T> operator*(Val<T> a, Val<T> b) {
    Tape<T>& tp = *a.tape;
    Shape sa = tp.val(a).shape(), sb = tp.val(b).shape();
    return ops::binary<T>(a, b, tp.val(a) * tp.val(b),
                          [sa, sb](Tape<T>& t, const Tensor<T>& g, int32_t ia, int32_t ib) {
                              t.acc(ia, reduce_to_shape(g * t.val(ib), sa));
                              t.acc(ib, reduce_to_shape(g * t.val(ia), sb));
                          });
}

template <class T>
Val<T> operator/(Val<T> a, Val<T> b) {
    Tape<T>& tp = *a.tape;
    Shape sa = tp.val(a).shape(), sb = tp.val(b).shape();
    Tensor<T> out = broadcast_op(tp.val(a), tp.val(b), [](T x, T y) { return x / y; });
    return ops::binary<T>(a, b, std::move(out),
                          [sa, sb](Tape<T>& t, const Tensor<T>& g, int32_t ia, int32_t ib) {
                              const Tensor<T>& vb = t.val(ib);
                              t.acc(ia, reduce_to_shape(
                                            broadcast_op(g, vb, [](T gg, T y) { return gg / y; }), sa));
                              Tensor<T> gb = broadcast_op(g * t.val(ia), vb,
                                                          [](T gx, T y) { return -gx / (y * y); });
                              t.acc(ib, reduce_to_shape(gb, sb));
                          });
}

template <class T>
Val<T> mul_scalar(Val<T> a, T s) {
    Tape<T>& tp = *a.tape;
    int32_t ia = a.id;
    return {&tp, tp.make(scale(tp.val(a), s), tp.rg(a),
                         [ia, s](Tape<T>& t, const Tensor<T>& g) { t.acc(ia, scale(g, s)); })};
}

template <class T>
Val<T> add_scalar(Val<T> a, T s) {
    Tape<T>& tp = *a.tape;
    int32_t ia = a.id;
    return {&tp, tp.make(map(tp.val(a), [s](T x) { return x + s; }), tp.rg(a),
                         [ia](Tape<T>& t, const Tensor<T>& g) { t.acc(ia, Tensor<T>(g)); })};
}

template <class T>
Val<T> neg(Val<T> a) {
    return mul_scalar(a, T(-1));
}

namespace ops {

// Elementwise f with derivative expressed from (x, y).
template <class T, class F, class DF>
Val<T> unary(Val<T> a, F f, DF df) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out = map(tp.val(a), f);
    int32_t ia = a.id;
    return {&tp, tp.make(std::move(out), tp.rg(a), [ia, df](Tape<T>& t, const Tensor<T>& g) {
                const Tensor<T>& x = t.val(ia);
                Tensor<T> gx(x.shape());
                for (int64_t i = 0; i < x.numel(); ++i) gx[i] = g[i] * df(x[i]);
                t.acc(ia, std::move(gx));
            })};
}

}  // namespace ops

template <class T>
Val<T> exp(Val<T> a) {
    return ops::unary(
        a, [](T x) { return std::exp(x); }, [](T x) { return std::exp(x); });
}

template <class T>
Val<T> log(Val<T> a) {
    return ops::unary(
        a, [](T x) { return std::log(x); }, [](T x) { return T(1) / x; });
}

template <class T>
Val<T> tanh(Val<T> a) {
    return ops::unary(
        a, [](T x) { return std::tanh(x); },
        [](T x) {
            T th = std::tanh(x);
            return T(1) - th * th;
        });
}

template <class T>
Val<T> sigmoid(Val<T> a) {
    return ops::unary(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T x) {
            T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) - s);
        });
}

template <class T>
Val<T> silu(Val<T> a) {
    return ops::unary(
        a,
        [](T x) {
            T s = T(1) / (T(1) + std::exp(-x));
            return x * s;
        },
        [](T x) {
            T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

template <class T>
Val<T> gelu(Val<T> a) {
    return ops::unary(
        a,
        [](T x) {
            const double k = 0.7978845608028654;  // sqrt(2/pi)
            double xd = double(x);
            return T(0.5 * xd * (1.0 + std::tanh(k * (xd + 0.044715 * xd * xd * xd))));
        },
        [](T x) {
            const double k = 0.7978845608028654;
            double xd = double(x);
            double u = k * (xd + 0.044715 * xd * xd * xd);
            double th = std::tanh(u);
            double du = k * (1.0 + 3.0 * 0.044715 * xd * xd);
            return T(0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * du);
        });
}

template <class T>
Val<T> square(Val<T> a) {
    return ops::unary(
        a, [](T x) { return x * x; }, [](T x) { return T(2) * x; });
}

template <class T>
Val<T> sqrt(Val<T> a) {
    return ops::unary(
        a, [](T x) { return std::sqrt(x); },
        [](T x) { return T(0.5) / std::sqrt(x); });
}

template <class T>
Val<T> clamp(Val<T> a, T lo, T hi) {
    return ops::unary(
        a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](T x) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <class T>
Val<T> matmul(Val<T> a, Val<T> b) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out = matmul(tp.val(a), tp.val(b));
    Shape sa = tp.val(a).shape(), sb = tp.val(b).shape();
    return ops::binary<T>(a, b, std::move(out),
                          [sa, sb](Tape<T>& t, const Tensor<T>& g, int32_t ia, int32_t ib) {
                              // dA = g Bᵀ, dB = Aᵀ g (reduced over shared batch dims)
                              Tensor<T> ga = matmul(g, transpose_last2(t.val(ib)));
                              Tensor<T> gb = matmul(transpose_last2(t.val(ia)), g);
                              t.acc(ia, reduce_to_shape(ga, sa));
                              t.acc(ib, reduce_to_shape(gb, sb));
                          });
}

template <class T>
Val<T> reshape(Val<T> a, Shape s) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out = tp.val(a).reshaped(std::move(s));
    Shape orig = tp.val(a).shape();
    int32_t ia = a.id;
    return {&tp, tp.make(std::move(out), tp.rg(a), [ia, orig](Tape<T>& t, const Tensor<T>& g) {
                t.acc(ia, g.reshaped(orig));
            })};
}

template <class T>
Val<T> permute(Val<T> a, std::vector<size_t> perm) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out = permuted(tp.val(a), perm);
    int32_t ia = a.id;
    return {&tp, tp.make(std::move(out), tp.rg(a), [ia, perm](Tape<T>& t, const Tensor<T>& g) {
                t.acc(ia, permuted(g, inverse_perm<T>(perm)));
            })};
}

template <class T>
Val<T> expand(Val<T> a, Shape target) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out = broadcast_op(tp.val(a), Tensor<T>::zeros(target), [](T x, T) { return x; });
    Shape orig = tp.val(a).shape();
    int32_t ia = a.id;
    return {&tp, tp.make(std::move(out), tp.rg(a), [ia, orig](Tape<T>& t, const Tensor<T>& g) {
                t.acc(ia, reduce_to_shape(g, orig));
            })};
}

template <class T>
Val<T> slice(Val<T> a, size_t axis, int64_t start, int64_t len) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& x = tp.val(a);
    if (axis >= x.rank() || start < 0 || start + len > x.dim(axis))
        throw ShapeError("slice out of range");
    Shape os = x.shape();
    os[axis] = len;
    Tensor<T> out(os);
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    int64_t d = x.dim(axis);
    for (int64_t o = 0; o < outer; ++o)
        std::copy(x.data() + (o * d + start) * inner, x.data() + (o * d + start + len) * inner,
                  out.data() + o * len * inner);
    int32_t ia = a.id;
    Shape orig = x.shape();
    return {&tp, tp.make(std::move(out), tp.rg(a),
                         [ia, orig, axis, start, len, outer, inner, d](Tape<T>& t, const Tensor<T>& g) {
                             Tensor<T> gx(orig);
                             for (int64_t o = 0; o < outer; ++o)
                                 std::copy(g.data() + o * len * inner, g.data() + (o + 1) * len * inner,
                                           gx.data() + (o * d + start) * inner);
                             t.acc(ia, std::move(gx));
                         })};
}

template <class T>
Val<T> concat(const std::vector<Val<T>>& parts, size_t axis) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    Tape<T>& tp = *parts[0].tape;
    Shape os = tp.val(parts[0]).shape();
    int64_t total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        total += tp.val(p).dim(axis);
        rg = rg || tp.rg(p);
    }
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= os[i];
    for (size_t i = axis + 1; i < os.size(); ++i) inner *= os[i];
    os[axis] = total;
    Tensor<T> out(os);
    std::vector<int64_t> lens;
    std::vector<int32_t> ids;
    int64_t off = 0;
    for (const auto& p : parts) {
        const Tensor<T>& x = tp.val(p);
        int64_t d = x.dim(axis);
        for (int64_t o = 0; o < outer; ++o)
            std::copy(x.data() + o * d * inner, x.data() + (o + 1) * d * inner,
                      out.data() + (o * total + off) * inner);
        off += d;
        lens.push_back(d);
        ids.push_back(p.id);
    }
    return {&tp,
            tp.make(std::move(out), rg,
                    [ids, lens, axis, outer, inner, total](Tape<T>& t, const Tensor<T>& g) {
                        int64_t off2 = 0;
                        for (size_t k = 0; k < ids.size(); ++k) {
                            Shape ps = g.shape();
                            ps[axis] = lens[k];
                            Tensor<T> gp(ps);
                            for (int64_t o = 0; o < outer; ++o)
                                std::copy(g.data() + (o * total + off2) * inner,
                                          g.data() + (o * total + off2 + lens[k]) * inner,
                                          gp.data() + o * lens[k] * inner);
                            t.acc(ids[k], std::move(gp));
                            off2 += lens[k];
                        }
                    })};
}

// rows: table[V, C] gathered by flat indices -> [n, C].
template <class T>
Val<T> gather_rows(Val<T> table, std::vector<int64_t> idx) {
    Tape<T>& tp = *table.tape;
    const Tensor<T>& tb = tp.val(table);
    if (tb.rank() != 2) throw ShapeError("gather_rows expects a [V,C] table");
    int64_t V = tb.dim(0), C = tb.dim(1);
    Tensor<T> out({int64_t(idx.size()), C});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= V) throw DataError("embedding index out of range");
        std::copy(tb.data() + idx[i] * C, tb.data() + (idx[i] + 1) * C, out.data() + int64_t(i) * C);
    }
    int32_t it = table.id;
    return {&tp, tp.make(std::move(out), tp.rg(table),
                         [it, idx = std::move(idx), V, C](Tape<T>& t, const Tensor<T>& g) {
                             Tensor<T> gt({V, C});
                             for (size_t i = 0; i < idx.size(); ++i)
                                 for (int64_t c = 0; c < C; ++c)
                                     gt[idx[i] * C + c] += g[int64_t(i) * C + c];
                             t.acc(it, std::move(gt));
                         })};
}

template <class T>
Val<T> sum_all(Val<T> a) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out = Tensor<T>::scalar(sum(tp.val(a)));
    Shape orig = tp.val(a).shape();
    int32_t ia = a.id;
    return {&tp, tp.make(std::move(out), tp.rg(a), [ia, orig](Tape<T>& t, const Tensor<T>& g) {
                t.acc(ia, Tensor<T>::full(orig, g[0]));
            })};
}

template <class T>
Val<T> mean_all(Val<T> a) {
    int64_t n = a.tape->val(a).numel();
    return mul_scalar(sum_all(a), T(1) / T(n));
}

template <class T>
Val<T> softmax_lastdim(Val<T> a) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& x = tp.val(a);
    int64_t C = x.dim(x.rank() - 1);
    int64_t rows = x.numel() / C;
    Tensor<T> out(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const T* px = x.data() + r * C;
        T* po = out.data() + r * C;
        T m = px[0];
        for (int64_t i = 1; i < C; ++i) m = std::max(m, px[i]);
        T s = T(0);
        for (int64_t i = 0; i < C; ++i) {
            po[i] = std::exp(px[i] - m);
            s += po[i];
        }
        T inv = T(1) / s;
        for (int64_t i = 0; i < C; ++i) po[i] *= inv;
    }
    int32_t ia = a.id;
    int32_t self = tp.make(std::move(out), tp.rg(a), nullptr);
    tp.set_backward(self, [self, ia, rows, C](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& y = t.val(self);
        Tensor<T> gx(y.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const T* py = y.data() + r * C;
            const T* pg = g.data() + r * C;
            T dot = T(0);
            for (int64_t i = 0; i < C; ++i) dot += py[i] * pg[i];
            T* pgx = gx.data() + r * C;
            for (int64_t i = 0; i < C; ++i) pgx[i] = py[i] * (pg[i] - dot);
        }
        t.acc(ia, std::move(gx));
    });
    return {&tp, self};
}

template <class T>
Val<T> layer_norm_lastdim(Val<T> a, T eps = T(1e-5)) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& x = tp.val(a);
    int64_t C = x.dim(x.rank() - 1);
    int64_t rows = x.numel() / C;
    Tensor<T> out(x.shape());
    Tensor<T> inv_std({rows});
    for (int64_t r = 0; r < rows; ++r) {
        const T* px = x.data() + r * C;
        T* po = out.data() + r * C;
        T mu = T(0);
        for (int64_t i = 0; i < C; ++i) mu += px[i];
        mu /= T(C);
        T var = T(0);
        for (int64_t i = 0; i < C; ++i) var += (px[i] - mu) * (px[i] - mu);
        var /= T(C);
        T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int64_t i = 0; i < C; ++i) po[i] = (px[i] - mu) * is;
    }
    int32_t ia = a.id;
    return {&tp, tp.make(std::move(out), tp.rg(a),
                         [ia, rows, C, inv_std = std::move(inv_std)](Tape<T>& t, const Tensor<T>& g) {
                             // index of this node's value: recomputed from g's shape owner
                             const Tensor<T>& x = t.val(ia);
                             Tensor<T> gx(x.shape());
                             for (int64_t r = 0; r < rows; ++r) {
                                 const T* pg = g.data() + r * C;
                                 const T* px = x.data() + r * C;
                                 T is = inv_std[r];
                                 T mu = T(0);
                                 for (int64_t i = 0; i < C; ++i) mu += px[i];
                                 mu /= T(C);
                                 T gmean = T(0), gymean = T(0);
                                 for (int64_t i = 0; i < C; ++i) {
                                     T y = (px[i] - mu) * is;
                                     gmean += pg[i];
                                     gymean += pg[i] * y;
                                 }
                                 gmean /= T(C);
                                 gymean /= T(C);
                                 T* pgx = gx.data() + r * C;
                                 for (int64_t i = 0; i < C; ++i) {
                                     T y = (px[i] - mu) * is;
                                     pgx[i] = is * (pg[i] - gmean - y * gymean);
                                 }
                             }
                             t.acc(ia, std::move(gx));
                         })};
}

template <class T>
Val<T> rms_norm_lastdim(Val<T> a, T eps = T(1e-6)) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& x = tp.val(a);
    int64_t C = x.dim(x.rank() - 1);
    int64_t rows = x.numel() / C;
    Tensor<T> out(x.shape());
    Tensor<T> inv_r({rows});
    for (int64_t r = 0; r < rows; ++r) {
        const T* px = x.data() + r * C;
        T ms = T(0);
        for (int64_t i = 0; i < C; ++i) ms += px[i] * px[i];
        T ir = T(1) / std::sqrt(ms / T(C) + eps);
        inv_r[r] = ir;
        T* po = out.data() + r * C;
        for (int64_t i = 0; i < C; ++i) po[i] = px[i] * ir;
    }
    int32_t ia = a.id;
    return {&tp, tp.make(std::move(out), tp.rg(a),
                         [ia, rows, C, inv_r = std::move(inv_r)](Tape<T>& t, const Tensor<T>& g) {
                             const Tensor<T>& x = t.val(ia);
                             Tensor<T> gx(x.shape());
                             for (int64_t r = 0; r < rows; ++r) {
                                 const T* pg = g.data() + r * C;
                                 const T* px = x.data() + r * C;
                                 T ir = inv_r[r];
                                 T gy = T(0);
                                 for (int64_t i = 0; i < C; ++i) gy += pg[i] * px[i] * ir;
                                 gy /= T(C);
                                 T* pgx = gx.data() + r * C;
                                 for (int64_t i = 0; i < C; ++i)
                                     pgx[i] = ir * (pg[i] - px[i] * ir * gy);
                             }
                             t.acc(ia, std::move(gx));
                         })};
}

// [B,Tt,H,W,C] -> [B,Tt/st,H/sh,W/sw,st*sh*sw*C]; kernel==stride convolutions
// become patchify + matmul.
template <class T>
Val<T> patchify(Val<T> a, int64_t st, int64_t sh, int64_t sw) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& x = tp.val(a);
    if (x.rank() != 5) throw ShapeError("patchify expects [B,T,H,W,C]");
    int64_t B = x.dim(0), Tt = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
    if (Tt % st || H % sh || W % sw)
        throw ShapeError("patchify: dims " + shape_str(x.shape()) + " not divisible by stride");
    int64_t To = Tt / st, Ho = H / sh, Wo = W / sw;
    Tensor<T> out({B, To, Ho, Wo, st * sh * sw * C});
    auto src_index = [&](int64_t b, int64_t t, int64_t h, int64_t w, int64_t c) {
        return (((b * Tt + t) * H + h) * W + w) * C + c;
    };
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t to = 0; to < To; ++to)
            for (int64_t ho = 0; ho < Ho; ++ho)
                for (int64_t wo = 0; wo < Wo; ++wo)
                    for (int64_t dt = 0; dt < st; ++dt)
                        for (int64_t dh = 0; dh < sh; ++dh)
                            for (int64_t dw = 0; dw < sw; ++dw)
                                for (int64_t c = 0; c < C; ++c)
                                    out[o++] = x[src_index(b, to * st + dt, ho * sh + dh,
                                                           wo * sw + dw, c)];
    int32_t ia = a.id;
    Shape orig = x.shape();
    return {&tp, tp.make(std::move(out), tp.rg(a),
                         [ia, orig, st, sh, sw](Tape<T>& t, const Tensor<T>& g) {
                             int64_t B = orig[0], Tt = orig[1], H = orig[2], W = orig[3], C = orig[4];
                             int64_t To = Tt / st, Ho = H / sh, Wo = W / sw;
                             Tensor<T> gx(orig);
                             int64_t o = 0;
                             for (int64_t b = 0; b < B; ++b)
                                 for (int64_t to = 0; to < To; ++to)
                                     for (int64_t ho = 0; ho < Ho; ++ho)
                                         for (int64_t wo = 0; wo < Wo; ++wo)
                                             for (int64_t dt = 0; dt < st; ++dt)
                                                 for (int64_t dh = 0; dh < sh; ++dh)
                                                     for (int64_t dw = 0; dw < sw; ++dw)
                                                         for (int64_t c = 0; c < C; ++c)
                                                             gx[(((b * Tt + to * st + dt) * H +
                                                                  ho * sh + dh) *
                                                                     W +
                                                                 wo * sw + dw) *
                                                                    C +
                                                                c] = g[o++];
                             t.acc(ia, std::move(gx));
                         })};
}

// Inverse of patchify: [B,T,H,W,st*sh*sw*C] -> [B,T*st,H*sh,W*sw,C]
// (depth-to-space generalized to the temporal axis).
template <class T>
Val<T> depth_to_space(Val<T> a, int64_t st, int64_t sh, int64_t sw, int64_t C_out) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& x = tp.val(a);
    if (x.rank() != 5) throw ShapeError("depth_to_space expects [B,T,H,W,C]");
    int64_t B = x.dim(0), Tt = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
    if (C != st * sh * sw * C_out) throw ShapeError("depth_to_space channel mismatch");
    Tensor<T> out({B, Tt * st, H * sh, W * sw, C_out});
    int64_t i = 0;
    int64_t To = Tt * st, Ho = H * sh, Wo = W * sw;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < Tt; ++t)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w)
                    for (int64_t dt = 0; dt < st; ++dt)
                        for (int64_t dh = 0; dh < sh; ++dh)
                            for (int64_t dw = 0; dw < sw; ++dw)
                                for (int64_t c = 0; c < C_out; ++c)
                                    out[(((b * To + t * st + dt) * Ho + h * sh + dh) * Wo +
                                         w * sw + dw) *
                                            C_out +
                                        c] = x[i++];
    int32_t ia = a.id;
    Shape orig = x.shape();
    return {&tp, tp.make(std::move(out), tp.rg(a),
                         [ia, orig, st, sh, sw, C_out](Tape<T>& t, const Tensor<T>& g) {
                             int64_t B = orig[0], Tt = orig[1], H = orig[2], W = orig[3];
                             int64_t To = Tt * st, Ho = H * sh, Wo = W * sw;
                             Tensor<T> gx(orig);
                             int64_t i = 0;
                             for (int64_t b = 0; b < B; ++b)
                                 for (int64_t tt = 0; tt < Tt; ++tt)
                                     for (int64_t h = 0; h < H; ++h)
                                         for (int64_t w = 0; w < W; ++w)
                                             for (int64_t dt = 0; dt < st; ++dt)
                                                 for (int64_t dh = 0; dh < sh; ++dh)
                                                     for (int64_t dw = 0; dw < sw; ++dw)
                                                         for (int64_t c = 0; c < C_out; ++c)
                                                             gx[i++] = g[(((b * To + tt * st + dt) * Ho +
                                                                           h * sh + dh) *
                                                                              Wo +
                                                                          w * sw + dw) *
                                                                             C_out +
                                                                         c];
                             t.acc(ia, std::move(gx));
                         })};
}

// Fused scalar losses; they avoid materializing full-size intermediates.
template <class T>
Val<T> l2_loss(Val<T> pred, Tensor<T> target) {
    Tape<T>& tp = *pred.tape;
    const Tensor<T>& p = tp.val(pred);
    if (p.shape() != target.shape()) throw ShapeError("l2_loss shape mismatch");
    int64_t n = p.numel();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) {
        T d = p[i] - target[i];
        acc += d * d;
    }
    int32_t ip = pred.id;
    return {&tp, tp.make(Tensor<T>::scalar(acc / T(n)), tp.rg(pred),
                         [ip, target = std::move(target), n](Tape<T>& t, const Tensor<T>& g) {
                             const Tensor<T>& p = t.val(ip);
                             Tensor<T> gp(p.shape());
                             T s = g[0] * T(2) / T(n);
                             for (int64_t i = 0; i < n; ++i) gp[i] = s * (p[i] - target[i]);
                             t.acc(ip, std::move(gp));
                         })};
}

template <class T>
Val<T> l1_loss(Val<T> pred, Tensor<T> target) {
    Tape<T>& tp = *pred.tape;
    const Tensor<T>& p = tp.val(pred);
    if (p.shape() != target.shape()) throw ShapeError("l1_loss shape mismatch");
    int64_t n = p.numel();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) acc += std::abs(p[i] - target[i]);
    int32_t ip = pred.id;
    return {&tp, tp.make(Tensor<T>::scalar(acc / T(n)), tp.rg(pred),
                         [ip, target = std::move(target), n](Tape<T>& t, const Tensor<T>& g) {
                             const Tensor<T>& p = t.val(ip);
                             Tensor<T> gp(p.shape());
                             T s = g[0] / T(n);
                             for (int64_t i = 0; i < n; ++i) {
                                 T d = p[i] - target[i];
                                 gp[i] = d > T(0) ? s : (d < T(0) ? -s : T(0));
                             }
                             t.acc(ip, std::move(gp));
                         })};
}

// Mean squared error over positions where mask==1. Mask shape must equal pred
// shape; normalization is by the mask population.
template <class T>
Val<T> masked_mse(Val<T> pred, Tensor<T> target, Tensor<T> mask) {
    Tape<T>& tp = *pred.tape;
    const Tensor<T>& p = tp.val(pred);
    if (p.shape() != target.shape() || p.shape() != mask.shape())
        throw ShapeError("masked_mse shape mismatch");
    int64_t n = p.numel();
    T acc = T(0), cnt = T(0);
    for (int64_t i = 0; i < n; ++i) {
        T d = (p[i] - target[i]) * mask[i];
        acc += d * d;
        cnt += mask[i];
    }
    if (cnt == T(0)) throw NumericError("masked_mse: empty mask");
    int32_t ip = pred.id;
    return {&tp,
            tp.make(Tensor<T>::scalar(acc / cnt), tp.rg(pred),
                    [ip, target = std::move(target), mask = std::move(mask), n,
                     cnt](Tape<T>& t, const Tensor<T>& g) {
                        const Tensor<T>& p = t.val(ip);
                        Tensor<T> gp(p.shape());
                        T s = g[0] * T(2) / cnt;
                        for (int64_t i = 0; i < n; ++i)
                            gp[i] = s * (p[i] - target[i]) * mask[i];
                        t.acc(ip, std::move(gp));
                    })};
}

// 1 - mean cosine similarity over the last axis; positions where either
// vector has near-zero norm are skipped.
template <class T>
Val<T> cosine_distance_loss(Val<T> x, Tensor<T> y, T eps = T(1e-8)) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = tp.val(x);
    if (xv.shape() != y.shape()) throw ShapeError("cosine loss shape mismatch");
    int64_t C = xv.dim(xv.rank() - 1);
    int64_t rows = xv.numel() / C;
    T acc = T(0);
    int64_t used = 0;
    for (int64_t r = 0; r < rows; ++r) {
        const T* px = xv.data() + r * C;
        const T* py = y.data() + r * C;
        T nx = T(0), ny = T(0), dot = T(0);
        for (int64_t i = 0; i < C; ++i) {
            nx += px[i] * px[i];
            ny += py[i] * py[i];
            dot += px[i] * py[i];
        }
        if (nx < eps * eps || ny < eps * eps) continue;
        acc += dot / (std::sqrt(nx) * std::sqrt(ny));
        ++used;
    }
    T val = used ? T(1) - acc / T(used) : T(0);
    int32_t ix = x.id;
    return {&tp, tp.make(Tensor<T>::scalar(val), tp.rg(x),
                         [ix, y = std::move(y), C, rows, eps, used](Tape<T>& t, const Tensor<T>& g) {
                             if (!used) return;
                             const Tensor<T>& xv = t.val(ix);
                             Tensor<T> gx(xv.shape());
                             T s = -g[0] / T(used);
                             for (int64_t r = 0; r < rows; ++r) {
                                 const T* px = xv.data() + r * C;
                                 const T* py = y.data() + r * C;
                                 T nx = T(0), ny = T(0), dot = T(0);
                                 for (int64_t i = 0; i < C; ++i) {
                                     nx += px[i] * px[i];
                                     ny += py[i] * py[i];
                                     dot += px[i] * py[i];
                                 }
                                 if (nx < eps * eps || ny < eps * eps) continue;
                                 T inx = T(1) / std::sqrt(nx), iny = T(1) / std::sqrt(ny);
                                 T c = dot * inx * iny;
                                 T* pg = gx.data() + r * C;
                                 for (int64_t i = 0; i < C; ++i)
                                     pg[i] = s * (py[i] * inx * iny - c * px[i] * inx * inx);
                             }
                             t.acc(ix, std::move(gx));
                         })};
}

}  // namespace miniwm
