#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "miniwm/tape.hpp"
#include "miniwm/tensor.hpp"

namespace miniwm {

// Named parameter registry. Creation order is preserved so optimizers and
// checkpoints see a deterministic layout; init streams are keyed by name so
// weights do not depend on construction order changes elsewhere.
template <class T>
class Params {
public:
    explicit Params(uint64_t init_seed = 0) : seed_(init_seed) {}

    Tensor<T>& create(const std::string& name, Shape shape, T init_std) {
        auto it = values_.find(name);
        if (it != values_.end()) throw ConfigError("duplicate parameter " + name);
        Tensor<T> t(shape);
        if (init_std > T(0)) {
            Rng rng(fnv1a64(name, seed_ ^ 0x5851f42d4c957f2dULL));
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal()) * init_std;
        }
        order_.push_back(name);
        return values_.emplace(name, std::move(t)).first->second;
    }

    Tensor<T>& create_const(const std::string& name, Shape shape, T fill) {
        auto it = values_.find(name);
        if (it != values_.end()) throw ConfigError("duplicate parameter " + name);
        order_.push_back(name);
        return values_.emplace(name, Tensor<T>::full(std::move(shape), fill)).first->second;
    }

    bool has(const std::string& name) const { return values_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = values_.find(name);
        if (it == values_.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = values_.find(name);
        if (it == values_.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }

    const std::vector<std::string>& names() const { return order_; }
    size_t count() const { return order_.size(); }
    uint64_t init_seed() const { return seed_; }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& kv : values_) n += kv.second.numel();
        return n;
    }

    template <class U>
    Params<U> cast() const {
        Params<U> out(seed_);
        for (const auto& name : order_) out.adopt(name, values_.at(name).template cast<U>());
        return out;
    }

    void adopt(const std::string& name, Tensor<T> t) {
        if (!values_.count(name)) order_.push_back(name);
        values_[name] = std::move(t);
    }

private:
    uint64_t seed_;
    std::vector<std::string> order_;
    std::map<std::string, Tensor<T>> values_;
};

// Per-forward context: binds parameters into the tape exactly once so a
// parameter used by several modules is a single leaf.
template <class T>
struct Ctx {
    Tape<T>& tape;
    Params<T>& params;
    bool train = false;

    Ctx(Tape<T>& tape_, Params<T>& params_, bool train_ = false)
        : tape(tape_), params(params_), train(train_) {}

    Val<T> p(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        Val<T> v = tape.leaf(params.at(name), train);
        bound_.emplace(name, v);
        return v;
    }

    Val<T> constant(Tensor<T> t) { return tape.constant(std::move(t)); }

    Tensor<T> grad_of(const std::string& name) const {
        auto it = bound_.find(name);
        if (it == bound_.end()) return Tensor<T>();
        return tape.grad(it->second);
    }

    // Accumulate leaf gradients into `grads` after backward().
    void collect_grads(std::map<std::string, Tensor<T>>& grads) const {
        for (const auto& [name, v] : bound_) {
            const Tensor<T>& g = tape.grad(v);
            auto it = grads.find(name);
            if (it == grads.end())
                grads.emplace(name, g);
            else
                add_inplace(it->second, g);
        }
    }

private:
    std::unordered_map<std::string, Val<T>> bound_;
};

template <class T>
struct Linear {
    std::string w, b;
    bool has_bias = true;

    Linear() = default;
    Linear(Params<T>& P, const std::string& prefix, int64_t in, int64_t out, bool bias = true,
           bool zero_init = false) {
        w = prefix + ".w";
        b = prefix + ".b";
        has_bias = bias;
        T std_dev = zero_init ? T(0) : T(std::sqrt(2.0 / double(in + out)));
        P.create(w, {in, out}, std_dev);
        if (bias) P.create_const(b, {out}, T(0));
    }

    Val<T> operator()(Ctx<T>& ctx, Val<T> x) const {
        Val<T> y = matmul(x, ctx.p(w));
        if (has_bias) y = y + ctx.p(b);
        return y;
    }
};

template <class T>
struct LayerNorm {
    std::string g, b;
    T eps = T(1e-5);

    LayerNorm() = default;
    LayerNorm(Params<T>& P, const std::string& prefix, int64_t dim) {
        g = prefix + ".g";
        b = prefix + ".b";
        P.create_const(g, {dim}, T(1));
        P.create_const(b, {dim}, T(0));
    }

    Val<T> operator()(Ctx<T>& ctx, Val<T> x) const {
        return layer_norm_lastdim(x, eps) * ctx.p(g) + ctx.p(b);
    }
};

template <class T>
struct RmsGain {
    std::string g;
    T eps = T(1e-6);

    RmsGain() = default;
    RmsGain(Params<T>& P, const std::string& prefix, int64_t dim) {
        g = prefix + ".g";
        P.create_const(g, {dim}, T(1));
    }

    Val<T> operator()(Ctx<T>& ctx, Val<T> x) const { return rms_norm_lastdim(x, eps) * ctx.p(g); }
};

template <class T>
struct Mlp {
    Linear<T> fc1, fc2;

    Mlp() = default;
    Mlp(Params<T>& P, const std::string& prefix, int64_t dim, int64_t hidden) {
        fc1 = Linear<T>(P, prefix + ".fc1", dim, hidden);
        fc2 = Linear<T>(P, prefix + ".fc2", hidden, dim);
    }

    Val<T> operator()(Ctx<T>& ctx, Val<T> x) const { return fc2(ctx, gelu(fc1(ctx, x))); }
};

template <class T>
struct EmbeddingTable {
    std::string table;
    int64_t vocab = 0, dim = 0;

    EmbeddingTable() = default;
    EmbeddingTable(Params<T>& P, const std::string& prefix, int64_t vocab_, int64_t dim_) {
        table = prefix + ".table";
        vocab = vocab_;
        dim = dim_;
        P.create(table, {vocab, dim}, T(0.02));
    }

    // indices are flat; output [n, dim].
    Val<T> operator()(Ctx<T>& ctx, const std::vector<int64_t>& idx) const {
        for (int64_t i : idx)
            if (i < 0 || i >= vocab) throw DataError("embedding index out of range");
        return gather_rows(ctx.p(table), idx);
    }
};

// Multi-head attention with query-key RMS normalization. q is [..., Sq, C]
// and kv [..., Sk, C] with identical leading dims.
template <class T>
struct Attention {
    Linear<T> wq, wk, wv, wo;
    RmsGain<T> qg, kg;
    int64_t heads = 1, dim = 0;

    Attention() = default;
    Attention(Params<T>& P, const std::string& prefix, int64_t dim_, int64_t heads_) {
        dim = dim_;
        heads = heads_;
        if (dim % heads) throw ConfigError("attention dim must divide heads");
        wq = Linear<T>(P, prefix + ".wq", dim, dim, false);
        wk = Linear<T>(P, prefix + ".wk", dim, dim, false);
        wv = Linear<T>(P, prefix + ".wv", dim, dim, false);
        wo = Linear<T>(P, prefix + ".wo", dim, dim);
        qg = RmsGain<T>(P, prefix + ".qnorm", dim / heads);
        kg = RmsGain<T>(P, prefix + ".knorm", dim / heads);
    }

    Val<T> operator()(Ctx<T>& ctx, Val<T> q_in, Val<T> kv_in) const {
        const Shape qs = ctx.tape.val(q_in).shape();
        const Shape ks = ctx.tape.val(kv_in).shape();
        int64_t Sq = qs[qs.size() - 2], Sk = ks[ks.size() - 2];
        int64_t nb = ctx.tape.val(q_in).numel() / (Sq * dim);
        int64_t dh = dim / heads;

        auto split = [&](Val<T> x, const Linear<T>& proj, int64_t S) {
            Val<T> h = proj(ctx, x);
            h = reshape(h, {nb, S, heads, dh});
            return permute(h, {0, 2, 1, 3});  // [nb, heads, S, dh]
        };
        Val<T> q = qg(ctx, split(q_in, wq, Sq));
        Val<T> k = kg(ctx, split(kv_in, wk, Sk));
        Val<T> v = split(kv_in, wv, Sk);

        Val<T> logits = matmul(q, permute(k, {0, 1, 3, 2}));
        logits = mul_scalar(logits, T(1.0 / std::sqrt(double(dh))));
        Val<T> attn = softmax_lastdim(logits);
        Val<T> out = matmul(attn, v);                // [nb, heads, Sq, dh]
        out = permute(out, {0, 2, 1, 3});            // [nb, Sq, heads, dh]
        Shape os = qs;
        out = reshape(out, os);
        return wo(ctx, out);
    }

    Val<T> operator()(Ctx<T>& ctx, Val<T> x) const { return (*this)(ctx, x, x); }
};

// Standard sinusoidal features: [n, dim] for integer or real positions.
template <class T>
Tensor<T> sinusoid_features(const std::vector<double>& pos, int64_t dim, double max_period = 10000.0) {
    int64_t half = dim / 2;
    Tensor<T> out({int64_t(pos.size()), dim});
    for (size_t i = 0; i < pos.size(); ++i) {
        for (int64_t j = 0; j < half; ++j) {
            double freq = std::exp(-std::log(max_period) * double(j) / double(std::max<int64_t>(half - 1, 1)));
            out[int64_t(i) * dim + j] = T(std::sin(pos[i] * freq));
            out[int64_t(i) * dim + half + j] = T(std::cos(pos[i] * freq));
        }
        if (dim % 2) out[int64_t(i) * dim + dim - 1] = T(0);
    }
    return out;
}

}  // namespace miniwm
