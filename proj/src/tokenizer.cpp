#include "miniwm/tokenizer.hpp"

#include <cmath>

#include "miniwm/errors.hpp"

namespace miniwm {

Shape tokenizer_latent_shape(const TokenizerConfig& cfg, int64_t T_v, int64_t H_v, int64_t W_v) {
    if (T_v % cfg.temporal_factor)
        throw ShapeError("frame count " + std::to_string(T_v) + " not divisible by temporal factor");
    if (H_v % cfg.spatial_factor || W_v % cfg.spatial_factor)
        throw ShapeError("spatial dims not divisible by spatial factor");
    return {T_v / cfg.temporal_factor, H_v / cfg.spatial_factor, W_v / cfg.spatial_factor,
            cfg.latent_dim};
}

double compression_rate(const TokenizerConfig& cfg, int64_t T_v, int64_t H_v, int64_t W_v) {
    Shape ls = tokenizer_latent_shape(cfg, T_v, H_v, W_v);
    double pixel = double(T_v) * double(H_v) * double(W_v) * 3.0;
    double latent = double(ls[0]) * double(ls[1]) * double(ls[2]) * double(ls[3]);
    return pixel / latent;
}

template <class T>
Teacher<T>::Teacher(uint64_t seed, int64_t dim_, int64_t temporal_factor_)
    : dim(dim_), temporal_factor(temporal_factor_), params(seed) {
    if (temporal_factor != 4 && temporal_factor != 8)
        throw ConfigError("teacher temporal factor must be 4 or 8");
    s1 = Linear<T>(params, "teacher.s1", 2 * 4 * 4 * 3, dim);
    s2 = Linear<T>(params, "teacher.s2", 2 * 4 * 4 * dim, dim);
    int64_t t3 = temporal_factor == 8 ? 2 : 1;
    s3 = Linear<T>(params, "teacher.s3", t3 * 2 * 2 * dim, dim);
}

template <class T>
Val<T> Teacher<T>::forward(Tape<T>& tape, Val<T> frames) const {
    Ctx<T> ctx(tape, const_cast<Params<T>&>(params), false);
    int64_t t3 = temporal_factor == 8 ? 2 : 1;
    Val<T> x = tanh(s1(ctx, patchify(frames, 2, 4, 4)));
    x = tanh(s2(ctx, patchify(x, 2, 4, 4)));
    return s3(ctx, patchify(x, t3, 2, 2));
}

template <class T>
Tensor<T> Teacher<T>::features(const Tensor<T>& frames) const {
    Tape<T> tape;
    Val<T> out = forward(tape, tape.constant(frames));
    return tape.val(out);
}

template <class T>
Tensor<T> interp_teacher_to_latent(const Tensor<T>& feats, int64_t t_latent,
                                   int64_t teacher_factor, int64_t latent_factor) {
    int64_t B = feats.dim(0), Tt = feats.dim(1);
    int64_t inner = feats.numel() / (B * Tt);
    Tensor<T> out({B, t_latent, feats.dim(2), feats.dim(3), feats.dim(4)});
    for (int64_t i = 0; i < t_latent; ++i) {
        // latent step center expressed in teacher step coordinates
        double p = (double(i * latent_factor + latent_factor / 2) - double(teacher_factor) / 2.0) /
                   double(teacher_factor);
        p = std::min(std::max(p, 0.0), double(Tt - 1));
        int64_t lo = int64_t(std::floor(p));
        int64_t hi = std::min(lo + 1, Tt - 1);
        T w = T(p - double(lo));
        for (int64_t b = 0; b < B; ++b) {
            const T* plo = feats.data() + (b * Tt + lo) * inner;
            const T* phi = feats.data() + (b * Tt + hi) * inner;
            T* po = out.data() + (b * t_latent + i) * inner;
            for (int64_t k = 0; k < inner; ++k) po[k] = (T(1) - w) * plo[k] + w * phi[k];
        }
    }
    return out;
}

template <class T>
VideoTokenizer<T>::VideoTokenizer(Params<T>& P, const TokenizerConfig& cfg) : cfg_(cfg) {
    const std::string pre = "tokenizer/";
    int64_t E = cfg.embed_dim, S = cfg.stem_dim, L = cfg.latent_dim;
    stem_ = Linear<T>(P, pre + "stem", 2 * 3, S);
    conv1_ = Linear<T>(P, pre + "conv1", 2 * 8 * 8 * S, E);
    conv2_ = Linear<T>(P, pre + "conv2", 2 * 2 * 2 * E, E);
    auto make_block = [&](const std::string& name, bool temporal) {
        Block b;
        b.spatial = Attention<T>(P, name + ".sattn", E, cfg.heads);
        b.n1 = LayerNorm<T>(P, name + ".n1", E);
        if (temporal) {
            b.temporal = Attention<T>(P, name + ".tattn", E, cfg.heads);
            b.nt = LayerNorm<T>(P, name + ".nt", E);
            b.has_temporal = true;
        }
        b.n2 = LayerNorm<T>(P, name + ".n2", E);
        b.mlp = Mlp<T>(P, name + ".mlp", E, 4 * E);
        return b;
    };
    for (int64_t i = 0; i < cfg.encoder_blocks; ++i)
        enc_blocks_.push_back(make_block(pre + "enc." + std::to_string(i), false));
    conv3_ = Linear<T>(P, pre + "conv3", 1 * 2 * 2 * E, E);
    to_latent_ = Linear<T>(P, pre + "to_latent", E, 2 * L);

    from_latent_ = Linear<T>(P, pre + "from_latent", L, E);
    up0_ = Linear<T>(P, pre + "up0", E, 4 * E);
    for (int64_t i = 0; i < cfg.decoder_blocks_mid; ++i)
        dec_mid_.push_back(make_block(pre + "dec_mid." + std::to_string(i), true));
    up1_ = Linear<T>(P, pre + "up1", E, 8 * E);
    for (int64_t i = 0; i < cfg.decoder_blocks_hi; ++i)
        dec_hi_.push_back(make_block(pre + "dec_hi." + std::to_string(i), true));
    to_pix_ = Linear<T>(P, pre + "to_pix", E, 2 * 8 * 8 * 6);
}

template <class T>
Val<T> VideoTokenizer<T>::run_block(Ctx<T>& ctx, const Block& b, Val<T> x,
                                    bool use_temporal) const {
    x = x + b.spatial(ctx, b.n1(ctx, x));
    if (b.has_temporal && use_temporal) {
        Val<T> h = permute(b.nt(ctx, x), {0, 2, 1, 3});  // [B,S,T,C]
        h = b.temporal(ctx, h);
        x = x + permute(h, {0, 2, 1, 3});
    }
    return x + b.mlp(ctx, b.n2(ctx, x));
}

template <class T>
LatentDistributionVal<T> VideoTokenizer<T>::encode(Ctx<T>& ctx, Val<T> frames) const {
    const Tensor<T>& fv = ctx.tape.val(frames);
    if (fv.rank() != 5 || fv.dim(4) != 3) throw ShapeError("encode expects [B,T,H,W,3]");
    if (!fv.all_finite()) throw NumericError("encode: non-finite input");
    int64_t B = fv.dim(0);
    (void)tokenizer_latent_shape(cfg_, fv.dim(1), fv.dim(2), fv.dim(3));

    Val<T> x = gelu(stem_(ctx, patchify(frames, 2, 1, 1)));
    x = gelu(conv1_(ctx, patchify(x, 2, 8, 8)));
    x = gelu(conv2_(ctx, patchify(x, 2, 2, 2)));
    const Shape& s = ctx.tape.val(x).shape();  // [B, T_L, H/16, W/16, E]
    int64_t T_L = s[1], gh = s[2], gw = s[3], E = s[4];
    x = reshape(x, {B, T_L, gh * gw, E});
    for (const auto& b : enc_blocks_) x = run_block(ctx, b, x, false);
    x = reshape(x, {B, T_L, gh, gw, E});
    x = gelu(conv3_(ctx, patchify(x, 1, 2, 2)));
    Val<T> both = to_latent_(ctx, x);  // [B,T_L,h,w,2L]
    int64_t L = cfg_.latent_dim;
    Val<T> mean = slice(both, 4, 0, L);
    Val<T> log_std = clamp(slice(both, 4, L, L), T(cfg_.logstd_min), T(cfg_.logstd_max));
    return {mean, log_std};
}

template <class T>
LatentDistribution<T> VideoTokenizer<T>::encode(Params<T>& params, const Tensor<T>& frames) const {
    Tape<T> tape;
    Ctx<T> ctx(tape, params, false);
    auto d = encode(ctx, tape.constant(frames));
    return {tape.val(d.mean), tape.val(d.log_std)};
}

template <class T>
Val<T> VideoTokenizer<T>::decode(Ctx<T>& ctx, Val<T> latents) const {
    const Tensor<T>& lv = ctx.tape.val(latents);
    if (lv.rank() != 5 || lv.dim(4) != cfg_.latent_dim)
        throw ShapeError("decode expects [B,T,h,w,L]");
    int64_t B = lv.dim(0), T_L = lv.dim(1), h = lv.dim(2), w = lv.dim(3);
    int64_t E = cfg_.embed_dim;

    Val<T> x = gelu(from_latent_(ctx, latents));
    x = depth_to_space(up0_(ctx, x), 1, 2, 2, E);  // [B,T_L,2h,2w,E]
    x = reshape(x, {B, T_L, 4 * h * w, E});
    for (const auto& b : dec_mid_) x = run_block(ctx, b, x, cfg_.temporal_attention);
    x = reshape(x, {B, T_L, 2 * h, 2 * w, E});
    x = depth_to_space(up1_(ctx, x), 2, 2, 2, E);  // [B,2T_L,4h,4w,E]
    x = reshape(x, {B, 2 * T_L, 16 * h * w, E});
    for (const auto& b : dec_hi_) x = run_block(ctx, b, x, cfg_.temporal_attention);
    x = reshape(x, {B, 2 * T_L, 4 * h, 4 * w, E});
    x = depth_to_space(to_pix_(ctx, x), 2, 8, 8, 6);   // [B,4T_L,32h,32w,6]
    x = depth_to_space(x, 2, 1, 1, 3);                 // [B,8T_L,32h,32w,3]
    return sigmoid(x);
}

template <class T>
Tensor<T> VideoTokenizer<T>::decode(Params<T>& params, const Tensor<T>& latents) const {
    if (latents.dim(1) != cfg_.decode_window)
        throw ShapeError("decode expects exactly decode_window temporal latents");
    Tape<T> tape;
    Ctx<T> ctx(tape, params, false);
    return tape.val(decode(ctx, tape.constant(latents)));
}

template <class T>
int64_t VideoTokenizer<T>::rolling_decode_windows(int64_t t_total) const {
    return std::max<int64_t>(t_total - cfg_.decode_window + 1, 1);
}

template <class T>
Tensor<T> VideoTokenizer<T>::rolling_decode(Params<T>& params, const Tensor<T>& latents) const {
    if (latents.rank() != 4) throw ShapeError("rolling_decode expects [T,h,w,L]");
    int64_t T_total = latents.dim(0), h = latents.dim(1), w = latents.dim(2), L = latents.dim(3);
    int64_t win = cfg_.decode_window;
    int64_t tf = cfg_.temporal_factor;
    int64_t H = 32 * h, W = 32 * w;

    auto decode_span = [&](int64_t start, int64_t len) {
        Tensor<T> slab({1, len, h, w, L});
        std::copy(latents.data() + start * h * w * L, latents.data() + (start + len) * h * w * L,
                  slab.data());
        Tape<T> tape;
        Ctx<T> ctx(tape, params, false);
        return tape.val(decode(ctx, tape.constant(std::move(slab))));
    };

    Tensor<T> out({T_total * tf, H, W, 3});
    if (T_total <= win) {
        Tensor<T> all = decode_span(0, T_total);
        std::copy(all.data(), all.data() + all.numel(), out.data());
        return out;
    }

    int64_t frame_sz = H * W * 3;
    int64_t n_windows = rolling_decode_windows(T_total);
    for (int64_t s = 0; s < n_windows; ++s) {
        Tensor<T> frames = decode_span(s, win);
        int64_t center = s + win / 2;
        int64_t emit_lo = (s == 0) ? s : center;
        int64_t emit_hi = (s == n_windows - 1) ? s + win - 1 : center;
        for (int64_t i = emit_lo; i <= emit_hi; ++i) {
            int64_t local = i - s;
            std::copy(frames.data() + local * tf * frame_sz,
                      frames.data() + (local + 1) * tf * frame_sz,
                      out.data() + i * tf * frame_sz);
        }
    }
    return out;
}

template <class T>
Tensor<T> VideoTokenizer<T>::sample_latents(const LatentDistribution<T>& dist, Rng& rng) const {
    if (dist.mean.shape() != dist.log_std.shape())
        throw ShapeError("latent distribution shape mismatch");
    Tensor<T> out(dist.mean.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = dist.mean[i] + std::exp(dist.log_std[i]) * T(rng.normal());
    return out;
}

template <class T>
Val<T> kl_loss(const LatentDistributionVal<T>& dist) {
    Val<T> mu2 = square(dist.mean);
    Val<T> var = exp(mul_scalar(dist.log_std, T(2)));
    Val<T> term = add_scalar(mu2 + var, T(-1)) - mul_scalar(dist.log_std, T(2));
    return mean_all(mul_scalar(term, T(0.5)));
}

template <class T>
T kl_loss_value(const LatentDistribution<T>& dist) {
    T acc = T(0);
    for (int64_t i = 0; i < dist.mean.numel(); ++i) {
        T mu = dist.mean[i], ls = dist.log_std[i];
        acc += T(0.5) * (mu * mu + std::exp(T(2) * ls) - T(1) - T(2) * ls);
    }
    return acc / T(dist.mean.numel());
}

template <class T>
TokenizerLosses<T> VideoTokenizer<T>::loss(Ctx<T>& ctx, const Tensor<T>& frames, Rng& rng,
                                           const Teacher<T>& teacher) const {
    auto dist = encode(ctx, ctx.tape.constant(frames));
    const Tensor<T>& mv = ctx.tape.val(dist.mean);
    Tensor<T> eps(mv.shape());
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = T(rng.normal());
    Val<T> z = dist.mean + exp(dist.log_std) * ctx.tape.constant(std::move(eps));
    Val<T> pred = decode(ctx, z);

    Val<T> l1 = l1_loss(pred, frames);
    Val<T> l2 = l2_loss(pred, frames);
    Tensor<T> target_feats = teacher.features(frames);
    Val<T> pred_feats = teacher.forward(ctx.tape, pred);
    Val<T> perc = l2_loss(pred_feats, target_feats);
    Val<T> distill;
    {
        Tensor<T> interp = interp_teacher_to_latent(target_feats, mv.dim(1),
                                                    teacher.temporal_factor, cfg_.temporal_factor);
        // teacher grid is already the latent spatial grid; widths must agree
        if (interp.dim(2) != mv.dim(2) || interp.dim(3) != mv.dim(3) || interp.dim(4) != mv.dim(4))
            throw ShapeError("teacher features do not project onto the latent grid");
        distill = cosine_distance_loss(dist.mean, std::move(interp));
    }
    Val<T> kl = kl_loss(dist);

    Val<T> total = mul_scalar(l1, T(cfg_.w_l1)) + mul_scalar(l2, T(cfg_.w_l2)) +
                   mul_scalar(perc, T(cfg_.w_perceptual)) + mul_scalar(distill, T(cfg_.w_distill)) +
                   mul_scalar(kl, T(cfg_.w_kl));

    TokenizerLosses<T> out;
    out.total = total;
    out.l1 = ctx.tape.val(l1).item();
    out.l2 = ctx.tape.val(l2).item();
    out.perceptual = ctx.tape.val(perc).item();
    out.distill = ctx.tape.val(distill).item();
    out.kl = ctx.tape.val(kl).item();
    return out;
}

template struct Teacher<float>;
template struct Teacher<double>;
template class VideoTokenizer<float>;
template class VideoTokenizer<double>;
template Val<float> kl_loss(const LatentDistributionVal<float>&);
template Val<double> kl_loss(const LatentDistributionVal<double>&);
template float kl_loss_value(const LatentDistribution<float>&);
template double kl_loss_value(const LatentDistribution<double>&);
template Tensor<float> interp_teacher_to_latent(const Tensor<float>&, int64_t, int64_t, int64_t);
template Tensor<double> interp_teacher_to_latent(const Tensor<double>&, int64_t, int64_t, int64_t);

}  // namespace miniwm
