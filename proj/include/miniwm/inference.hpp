#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "miniwm/conditioning.hpp"
#include "miniwm/tensor.hpp"

namespace miniwm {

struct NoiseSchedule {
    std::vector<double> taus;  // tau_0 = 0 < ... < tau_S = 1

    int64_t steps() const { return int64_t(taus.size()) - 1; }
    void validate() const;
    // smallest index i with taus[i] >= tau
    int64_t index_at_or_above(double tau) const;
};

// Linearly spaced levels tau_i = i/L for i <= S_lin, then quadratic spacing
// to reach 1 exactly at step S.
NoiseSchedule linear_quadratic_schedule(int64_t S = 50, int64_t S_lin = 25, int64_t L = 1000);

struct GuidanceConfig {
    double scale = 1.0;  // 1 = guidance off
    std::optional<Tensor<float>> spatial_mask;  // [T,N,H,W]; apply CFG only inside
};

// v_uncond + scale*(v_cond - v_uncond); with a spatial mask the combination
// applies only at masked positions and v_cond passes through elsewhere.
template <class T>
Tensor<T> cfg_combine(const Tensor<T>& v_cond, const Tensor<T>& v_uncond,
                      const GuidanceConfig& g);

// Velocity field callback: x is the current latent state [T,N,H,W,L].
template <class T>
using VelocityFn = std::function<Tensor<T>(const Tensor<T>& x, double tau)>;

// Explicit Euler over the schedule grid from start_index. After every step,
// positions where keep_mask==1 are re-imposed from keep_values.
template <class T>
Tensor<T> euler_denoise(Tensor<T> x, int64_t start_index, const NoiseSchedule& sched,
                        const VelocityFn<T>& velocity, const Tensor<float>* keep_mask = nullptr,
                        const Tensor<T>* keep_values = nullptr);

// Latent cells whose spatial footprint intersects a valid 2D agent box
// (boxes are feature dims 0..3 of AgentFeatures). Result is [T,N,H,W].
Tensor<float> build_agent_cfg_mask(const AgentFeatures& agents, int64_t latent_h,
                                   int64_t latent_w);

extern template Tensor<float> cfg_combine(const Tensor<float>&, const Tensor<float>&,
                                          const GuidanceConfig&);
extern template Tensor<double> cfg_combine(const Tensor<double>&, const Tensor<double>&,
                                           const GuidanceConfig&);
extern template Tensor<float> euler_denoise(Tensor<float>, int64_t, const NoiseSchedule&,
                                            const VelocityFn<float>&, const Tensor<float>*,
                                            const Tensor<float>*);
extern template Tensor<double> euler_denoise(Tensor<double>, int64_t, const NoiseSchedule&,
                                             const VelocityFn<double>&, const Tensor<float>*,
                                             const Tensor<double>*);

}  // namespace miniwm
