#include "miniwm/world_model.hpp"

#include <cmath>

#include "miniwm/errors.hpp"

namespace miniwm {

double sample_tau(Rng& rng, const TauMixture& m) {
    bool primary = rng.uniform() < m.p1;
    double u = (primary ? m.mu1 : m.mu2) + (primary ? m.sigma1 : m.sigma2) * rng.normal();
    double tau = 1.0 / (1.0 + std::exp(-u));
    return std::min(std::max(tau, 1e-7), 1.0 - 1e-7);
}

double tau_mixture_cdf(double tau, const TauMixture& m) {
    if (tau <= 0) return 0;
    if (tau >= 1) return 1;
    double u = std::log(tau / (1.0 - tau));
    auto phi = [](double z) { return 0.5 * (1.0 + std::erf(z / std::sqrt(2.0))); };
    return m.p1 * phi((u - m.mu1) / m.sigma1) + m.p2 * phi((u - m.mu2) / m.sigma2);
}

int64_t sample_context_length(Rng& rng, int64_t T) {
    if (T < 1) throw ShapeError("context sampling needs T >= 1");
    return rng.range(0, T - 1);
}

namespace {

template <class T>
FlowBatch<T> flow_batch_impl(const Tensor<T>& x, Rng& rng, const std::vector<double>& tau,
                             const Tensor<float>& regen_mask, int64_t t_ctx) {
    if (x.rank() != 6) throw ShapeError("flow batch expects [B,T,N,H,W,L]");
    int64_t B = x.dim(0), L = x.dim(5);
    if (int64_t(tau.size()) != B) throw ShapeError("one tau per batch sample required");
    int64_t cells = x.numel() / (B * L);
    if (regen_mask.numel() != cells) throw ShapeError("regenerate mask shape mismatch");

    FlowBatch<T> out;
    out.clean = x;
    out.noisy = x;
    out.velocity = Tensor<T>(x.shape());
    out.mask = Tensor<T>(x.shape());
    out.tau = tau;
    out.t_ctx = t_ctx;

    for (int64_t b = 0; b < B; ++b) {
        T tb = T(tau[size_t(b)]);
        for (int64_t c = 0; c < cells; ++c) {
            int64_t off = (b * cells + c) * L;
            if (regen_mask[c] == 0.0f) continue;
            for (int64_t l = 0; l < L; ++l) {
                T eps = T(rng.normal());
                T xv = x[off + l];
                out.noisy[off + l] = tb * xv + (T(1) - tb) * eps;
                out.velocity[off + l] = xv - eps;
                out.mask[off + l] = T(1);
            }
        }
    }
    return out;
}

}  // namespace

template <class T>
FlowBatch<T> make_flow_batch(const Tensor<T>& x, Rng& rng, const std::vector<double>& tau,
                             int64_t t_ctx) {
    int64_t Tt = x.dim(1);
    if (t_ctx < 0 || t_ctx >= Tt) throw ShapeError("t_ctx out of range");
    Tensor<float> mask({Tt, x.dim(2), x.dim(3), x.dim(4)});
    int64_t per_t = mask.numel() / Tt;
    for (int64_t t = t_ctx; t < Tt; ++t)
        std::fill(mask.data() + t * per_t, mask.data() + (t + 1) * per_t, 1.0f);
    return flow_batch_impl(x, rng, tau, mask, t_ctx);
}

template <class T>
FlowBatch<T> make_flow_batch(const Tensor<T>& x, Rng& rng, const std::vector<double>& tau,
                             const Tensor<float>& regen_mask, int64_t t_ctx) {
    return flow_batch_impl(x, rng, tau, regen_mask, t_ctx);
}

template <class T>
WorldModel<T>::WorldModel(Params<T>& P, const RunConfig& cfg)
    : cond_enc_(P, "world_model/cond", cfg) {
    C_ = cfg.world_model.dim;
    heads_ = cfg.world_model.heads;
    L_ = cfg.tokenizer.latent_dim;
    Tt_ = cfg.world_model.latents_t;
    N_ = cfg.dataset.cameras;
    H_ = cfg.latent_h();
    W_ = cfg.latent_w();

    const std::string pre = "world_model/";
    token_embed_ = Linear<T>(P, pre + "token_embed", L_, C_);
    tau_fc1_ = Linear<T>(P, pre + "tau_fc1", C_, C_);
    tau_fc2_ = Linear<T>(P, pre + "tau_fc2", C_, C_);
    cam_placeholder_ = pre + "cam_placeholder";
    P.create(cam_placeholder_, {C_}, T(0.02));
    for (int64_t i = 0; i < cfg.world_model.blocks; ++i) {
        std::string bp = pre + "blocks." + std::to_string(i);
        Block b;
        b.spatial = Attention<T>(P, bp + ".sattn", C_, heads_);
        b.temporal = Attention<T>(P, bp + ".tattn", C_, heads_);
        b.cross = Attention<T>(P, bp + ".xattn", C_, heads_);
        b.mlp = Mlp<T>(P, bp + ".mlp", C_, cfg.world_model.mlp_ratio * C_);
        b.mod_s = Linear<T>(P, bp + ".mod_s", C_, 3 * C_, true, /*zero_init=*/true);
        b.mod_t = Linear<T>(P, bp + ".mod_t", C_, 3 * C_, true, true);
        b.mod_x = Linear<T>(P, bp + ".mod_x", C_, 3 * C_, true, true);
        b.mod_m = Linear<T>(P, bp + ".mod_m", C_, 3 * C_, true, true);
        blocks_.push_back(std::move(b));
    }
    mod_final_ = Linear<T>(P, pre + "mod_final", C_, 2 * C_, true, true);
    head_ = Linear<T>(P, pre + "head", C_, L_, true, true);
}

namespace {

template <class T>
struct Modulation {
    Val<T> shift, scale, gate;
};

template <class T>
Modulation<T> make_mod(Ctx<T>& ctx, const Linear<T>& lin, Val<T> cond, int64_t B, int64_t Tt,
                       int64_t C) {
    Val<T> m = lin(ctx, cond);  // [B,T,3C]
    return {reshape(slice(m, 2, 0, C), {B, Tt, 1, C}),
            reshape(slice(m, 2, C, C), {B, Tt, 1, C}),
            reshape(slice(m, 2, 2 * C, C), {B, Tt, 1, C})};
}

template <class T>
Val<T> modulate(Val<T> x, const Modulation<T>& m) {
    Val<T> h = layer_norm_lastdim(x);
    return h * add_scalar(m.scale, T(1)) + m.shift;
}

}  // namespace

template <class T>
Val<T> WorldModel<T>::forward(Ctx<T>& ctx, const Tensor<T>& x,
                              const typename ConditioningEncoder<T>::Encoded& cond,
                              const std::vector<double>& tau,
                              const std::vector<std::vector<uint8_t>>* camera_keep) const {
    if (x.rank() != 6) throw ShapeError("world model expects [B,T,N,H,W,L]");
    if (!x.all_finite()) throw NumericError("world model input is not finite");
    int64_t B = x.dim(0), Tt = x.dim(1), N = x.dim(2), H = x.dim(3), W = x.dim(4), L = x.dim(5);
    if (Tt != Tt_ || N != N_ || H != H_ || W != W_ || L != L_)
        throw ShapeError("world model input " + shape_str(x.shape()) + " does not match config");
    if (int64_t(tau.size()) != B) throw ShapeError("one tau per sample required");
    int64_t S = N * H * W;

    Val<T> tokens = token_embed_(ctx, reshape(ctx.tape.constant(x), {B, Tt, S, L}));

    if (camera_keep) {
        Tensor<T> keep({B, 1, S, 1});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t n = 0; n < N; ++n) {
                T v = (*camera_keep)[size_t(b)][size_t(n)] ? T(1) : T(0);
                for (int64_t i = 0; i < H * W; ++i) keep[(b * S) + n * H * W + i] = v;
            }
        Val<T> km = ctx.tape.constant(std::move(keep));
        Val<T> ph = reshape(ctx.p(cam_placeholder_), {1, 1, 1, C_});
        tokens = tokens * km + ph * add_scalar(neg(km), T(1));
    }

    // flow-time embedding -> [B,1,C]
    std::vector<double> tau_scaled;
    for (double t : tau) tau_scaled.push_back(t * 1000.0);
    Val<T> tau_emb = ctx.tape.constant(sinusoid_features<T>(tau_scaled, C_));
    tau_emb = tau_fc2_(ctx, gelu(tau_fc1_(ctx, tau_emb)));
    Val<T> cond_c = silu(reshape(tau_emb, {B, 1, C_}) + cond.action_emb);  // [B,T,C]

    // positional encodings, re-added at the start of every block
    Tensor<T> pos_hw({1, 1, S, C_});
    {
        std::vector<double> ids;
        for (int64_t i = 0; i < H * W; ++i) ids.push_back(double(i));
        Tensor<T> grid = sinusoid_features<T>(ids, C_);  // [H*W, C]
        for (int64_t n = 0; n < N; ++n)
            std::copy(grid.data(), grid.data() + grid.numel(), pos_hw.data() + n * H * W * C_);
    }
    Val<T> pos_spatial = ctx.tape.constant(std::move(pos_hw));
    Val<T> time_enc = reshape(cond.time_enc, {B, Tt, 1, C_});
    // camera encoding broadcast over each camera's spatial grid
    Val<T> cam_enc = reshape(expand(reshape(cond.camera_enc, {B, N, 1, C_}), {B, N, H * W, C_}),
                             {B, 1, S, C_});

    Val<T> h = tokens;
    for (const auto& blk : blocks_) {
        h = h + pos_spatial + time_enc + cam_enc;

        auto ms = make_mod(ctx, blk.mod_s, cond_c, B, Tt, C_);
        h = h + ms.gate * blk.spatial(ctx, modulate(h, ms));

        auto mt = make_mod(ctx, blk.mod_t, cond_c, B, Tt, C_);
        Val<T> ht = permute(modulate(h, mt), {0, 2, 1, 3});  // [B,S,T,C]
        h = h + mt.gate * permute(blk.temporal(ctx, ht), {0, 2, 1, 3});

        auto mx = make_mod(ctx, blk.mod_x, cond_c, B, Tt, C_);
        h = h + mx.gate * blk.cross(ctx, modulate(h, mx), cond.tokens);

        auto mm = make_mod(ctx, blk.mod_m, cond_c, B, Tt, C_);
        h = h + mm.gate * blk.mlp(ctx, modulate(h, mm));
    }

    Val<T> mf = mod_final_(ctx, cond_c);  // [B,T,2C]
    Val<T> shift = reshape(slice(mf, 2, 0, C_), {B, Tt, 1, C_});
    Val<T> scl = reshape(slice(mf, 2, C_, C_), {B, Tt, 1, C_});
    Val<T> out = layer_norm_lastdim(h) * add_scalar(scl, T(1)) + shift;
    out = head_(ctx, out);  // [B,T,S,L]
    return reshape(out, {B, Tt, N, H, W, L});
}

template <class T>
Val<T> flow_matching_loss(Val<T> pred, const FlowBatch<T>& batch) {
    return masked_mse(pred, batch.velocity, batch.mask);
}

template class WorldModel<float>;
template class WorldModel<double>;
template FlowBatch<float> make_flow_batch(const Tensor<float>&, Rng&, const std::vector<double>&,
                                          int64_t);
template FlowBatch<double> make_flow_batch(const Tensor<double>&, Rng&, const std::vector<double>&,
                                           int64_t);
template FlowBatch<float> make_flow_batch(const Tensor<float>&, Rng&, const std::vector<double>&,
                                          const Tensor<float>&, int64_t);
template FlowBatch<double> make_flow_batch(const Tensor<double>&, Rng&, const std::vector<double>&,
                                           const Tensor<float>&, int64_t);
template Val<float> flow_matching_loss(Val<float>, const FlowBatch<float>&);
template Val<double> flow_matching_loss(Val<double>, const FlowBatch<double>&);

}  // namespace miniwm
