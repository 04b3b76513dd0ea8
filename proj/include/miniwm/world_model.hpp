#pragma once

#include <vector>

#include "miniwm/conditioning.hpp"
#include "miniwm/config.hpp"
#include "miniwm/nn.hpp"
#include "miniwm/tape.hpp"
#include "miniwm/tensor.hpp"

namespace miniwm {

struct TauMixture {
    double mu1 = 0.5, sigma1 = 1.4, p1 = 0.8;
    double mu2 = -3.0, sigma2 = 1.0, p2 = 0.2;
};

inline TauMixture tau_mixture(const WorldModelConfig& c) {
    return {c.tau_mu1, c.tau_sigma1, c.tau_p1, c.tau_mu2, c.tau_sigma2, c.tau_p2};
}

// Bimodal logit-normal: pick a mode, draw u ~ N(mu, sigma), tau = logistic(u).
double sample_tau(Rng& rng, const TauMixture& m);
double tau_mixture_cdf(double tau, const TauMixture& m);

// Uniform over {0, ..., T-1}; 0 means from-scratch generation.
int64_t sample_context_length(Rng& rng, int64_t T);

template <class T>
Tensor<T> normalize_latents(const Tensor<T>& x, T mean, T std_dev) {
    return map(x, [mean, std_dev](T v) { return (v - mean) / std_dev; });
}

template <class T>
Tensor<T> denormalize_latents(const Tensor<T>& x, T mean, T std_dev) {
    return map(x, [mean, std_dev](T v) { return v * std_dev + mean; });
}

template <class T>
struct FlowBatch {
    Tensor<T> clean;     // [B,T,N,H,W,L], normalized
    Tensor<T> noisy;     // tau-interpolated on the regenerate region, clean elsewhere
    Tensor<T> velocity;  // x - eps on the regenerate region, zero elsewhere
    Tensor<T> mask;      // [B,T,N,H,W,L], 1 where the loss applies
    std::vector<double> tau;  // per sample
    int64_t t_ctx = 0;
};

// Context task: frames with t >= t_ctx are regenerated.
template <class T>
FlowBatch<T> make_flow_batch(const Tensor<T>& x, Rng& rng, const std::vector<double>& tau,
                             int64_t t_ctx);

// Explicit regenerate mask [T,N,H,W], shared across the batch.
template <class T>
FlowBatch<T> make_flow_batch(const Tensor<T>& x, Rng& rng, const std::vector<double>& tau,
                             const Tensor<float>& regen_mask, int64_t t_ctx = 0);

template <class T>
class WorldModel {
public:
    WorldModel(Params<T>& P, const RunConfig& cfg);

    // x [B,T,N,H,W,L] (normalized latents; context rows clean, future rows
    // noised) -> velocity prediction of the same shape. camera_keep[b][n]
    // false marks a dropped camera view (its tokens become a learned
    // placeholder).
    Val<T> forward(Ctx<T>& ctx, const Tensor<T>& x,
                   const typename ConditioningEncoder<T>::Encoded& cond,
                   const std::vector<double>& tau,
                   const std::vector<std::vector<uint8_t>>* camera_keep = nullptr) const;

    const ConditioningEncoder<T>& conditioner() const { return cond_enc_; }

    int64_t dim() const { return C_; }

private:
    struct Block {
        Attention<T> spatial, temporal, cross;
        Mlp<T> mlp;
        Linear<T> mod_s, mod_t, mod_x, mod_m;  // (shift, scale, gate) per sublayer
    };

    int64_t C_ = 0, heads_ = 0, L_ = 0, Tt_ = 0, N_ = 0, H_ = 0, W_ = 0;
    Linear<T> token_embed_;
    Linear<T> tau_fc1_, tau_fc2_;
    std::string cam_placeholder_;
    std::vector<Block> blocks_;
    Linear<T> mod_final_, head_;
    ConditioningEncoder<T> cond_enc_;
};

// Mean squared error over the future region only.
template <class T>
Val<T> flow_matching_loss(Val<T> pred, const FlowBatch<T>& batch);

extern template class WorldModel<float>;
extern template class WorldModel<double>;
extern template struct FlowBatch<float>;
extern template struct FlowBatch<double>;
extern template FlowBatch<float> make_flow_batch(const Tensor<float>&, Rng&,
                                                 const std::vector<double>&, int64_t);
extern template FlowBatch<double> make_flow_batch(const Tensor<double>&, Rng&,
                                                  const std::vector<double>&, int64_t);
extern template FlowBatch<float> make_flow_batch(const Tensor<float>&, Rng&,
                                                 const std::vector<double>&, const Tensor<float>&,
                                                 int64_t);
extern template FlowBatch<double> make_flow_batch(const Tensor<double>&, Rng&,
                                                  const std::vector<double>&, const Tensor<float>&,
                                                  int64_t);
extern template Val<float> flow_matching_loss(Val<float>, const FlowBatch<float>&);
extern template Val<double> flow_matching_loss(Val<double>, const FlowBatch<double>&);

}  // namespace miniwm
