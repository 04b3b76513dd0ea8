#pragma once

#include <string>
#include <vector>

#include "miniwm/config.hpp"
#include "miniwm/nn.hpp"
#include "miniwm/tape.hpp"
#include "miniwm/tensor.hpp"

namespace miniwm {

// Latent grid shape produced by the encoder stride ladder for a given video
// shape; pure arithmetic, no allocation.
Shape tokenizer_latent_shape(const TokenizerConfig& cfg, int64_t T_v, int64_t H_v, int64_t W_v);

// (pixel volume) / (latent volume) for a video -> latent shape pair.
double compression_rate(const TokenizerConfig& cfg, int64_t T_v, int64_t H_v, int64_t W_v);

template <class T>
struct LatentDistribution {
    Tensor<T> mean;     // [B, T_L, h, w, L]
    Tensor<T> log_std;  // same shape
};

template <class T>
struct LatentDistributionVal {
    Val<T> mean;
    Val<T> log_std;
};

// Frozen randomly-initialized convolutional pyramid; stand-in for a
// pretrained feature teacher. Output grid is (T_v / temporal_factor,
// H_v/32, W_v/32, dim). Parameters derive from the seed alone.
template <class T>
struct Teacher {
    int64_t dim = 0;
    int64_t temporal_factor = 4;
    Params<T> params;
    Linear<T> s1, s2, s3;

    Teacher() : params(0) {}
    Teacher(uint64_t seed, int64_t dim_, int64_t temporal_factor_);

    // Input [B,T,H,W,3]; set `track_grad` when the input participates in a
    // loss (perceptual path).
    Val<T> forward(Tape<T>& tape, Val<T> frames) const;
    Tensor<T> features(const Tensor<T>& frames) const;  // no-grad convenience
};

// Linear interpolation along the temporal axis of [B,T,h,w,d] feature maps
// onto the latent step centers (teacher stride -> tokenizer stride).
template <class T>
Tensor<T> interp_teacher_to_latent(const Tensor<T>& feats, int64_t t_latent,
                                   int64_t teacher_factor, int64_t latent_factor);

template <class T>
struct TokenizerLosses {
    Val<T> total;
    T l1 = T(0), l2 = T(0), perceptual = T(0), distill = T(0), kl = T(0);
};

// Space-time factorized autoencoder with Gaussian latents. The encoder is
// temporally blocked: each temporal latent sees exactly its own group of
// temporal_factor frames. The decoder attends across the whole window.
template <class T>
class VideoTokenizer {
public:
    VideoTokenizer(Params<T>& P, const TokenizerConfig& cfg);

    // frames [B, T_v, H_v, W_v, 3] -> mean/log_std [B, T_L, h, w, L]
    LatentDistributionVal<T> encode(Ctx<T>& ctx, Val<T> frames) const;
    LatentDistribution<T> encode(Params<T>& params, const Tensor<T>& frames) const;

    // latents [B, decode_window, h, w, L] -> frames [B, 8*window, 32h, 32w, 3]
    Val<T> decode(Ctx<T>& ctx, Val<T> latents) const;
    Tensor<T> decode(Params<T>& params, const Tensor<T>& latents) const;

    // latents [B, T_total, h, w, L], sliding window of decode_window with
    // stride 1; emits the center latent's frames per window (boundary
    // windows also emit their edge latents).
    Tensor<T> rolling_decode(Params<T>& params, const Tensor<T>& latents) const;
    int64_t rolling_decode_windows(int64_t t_total) const;

    Tensor<T> sample_latents(const LatentDistribution<T>& dist, Rng& rng) const;

    TokenizerLosses<T> loss(Ctx<T>& ctx, const Tensor<T>& frames, Rng& rng,
                            const Teacher<T>& teacher) const;

    const TokenizerConfig& config() const { return cfg_; }

private:
    struct Block {
        Attention<T> spatial;
        Attention<T> temporal;  // encoder blocks leave this unused
        LayerNorm<T> n1, nt, n2;
        Mlp<T> mlp;
        bool has_temporal = false;
    };

    Val<T> run_block(Ctx<T>& ctx, const Block& b, Val<T> x, bool use_temporal) const;

    TokenizerConfig cfg_;
    // encoder
    Linear<T> stem_, conv1_, conv2_, conv3_, to_latent_;
    std::vector<Block> enc_blocks_;
    // decoder
    Linear<T> from_latent_, up0_, up1_, to_pix_;
    std::vector<Block> dec_mid_, dec_hi_;
};

// KL(q || N(0,I)) averaged over elements: 0.5 * (mu^2 + sigma^2 - 1 - 2 log sigma).
template <class T>
Val<T> kl_loss(const LatentDistributionVal<T>& dist);

template <class T>
T kl_loss_value(const LatentDistribution<T>& dist);

extern template struct Teacher<float>;
extern template struct Teacher<double>;
extern template class VideoTokenizer<float>;
extern template class VideoTokenizer<double>;
extern template Val<float> kl_loss(const LatentDistributionVal<float>&);
extern template Val<double> kl_loss(const LatentDistributionVal<double>&);
extern template float kl_loss_value(const LatentDistribution<float>&);
extern template double kl_loss_value(const LatentDistribution<double>&);
extern template Tensor<float> interp_teacher_to_latent(const Tensor<float>&, int64_t, int64_t, int64_t);
extern template Tensor<double> interp_teacher_to_latent(const Tensor<double>&, int64_t, int64_t, int64_t);

}  // namespace miniwm
