#include "miniwm/inference.hpp"

#include <cmath>

#include "miniwm/errors.hpp"

namespace miniwm {

void NoiseSchedule::validate() const {
    if (taus.size() < 2) throw ConfigError("schedule needs at least one step");
    if (taus.front() != 0.0 || taus.back() != 1.0)
        throw ConfigError("schedule endpoints must be exactly 0 and 1");
    for (size_t i = 1; i < taus.size(); ++i)
        if (taus[i] <= taus[i - 1]) throw ConfigError("schedule must be strictly increasing");
}

int64_t NoiseSchedule::index_at_or_above(double tau) const {
    for (size_t i = 0; i < taus.size(); ++i)
        if (taus[i] >= tau) return int64_t(i);
    return int64_t(taus.size()) - 1;
}

NoiseSchedule linear_quadratic_schedule(int64_t S, int64_t S_lin, int64_t L) {
    if (S_lin >= S) throw ConfigError("linear segment must be shorter than the schedule");
    if (S_lin < 0 || L <= 0) throw ConfigError("bad schedule parameters");
    NoiseSchedule sched;
    sched.taus.resize(size_t(S) + 1);
    for (int64_t i = 0; i <= S_lin; ++i) sched.taus[size_t(i)] = double(i) / double(L);
    double tau_lin = double(S_lin) / double(L);
    int64_t q = S - S_lin;
    for (int64_t j = 1; j <= q; ++j) {
        double frac = double(j) / double(q);
        sched.taus[size_t(S_lin + j)] = tau_lin + (1.0 - tau_lin) * frac * frac;
    }
    sched.taus.back() = 1.0;
    sched.validate();
    return sched;
}

template <class T>
Tensor<T> cfg_combine(const Tensor<T>& v_cond, const Tensor<T>& v_uncond,
                      const GuidanceConfig& g) {
    if (v_cond.shape() != v_uncond.shape()) throw ShapeError("cfg branches disagree on shape");
    if (!g.spatial_mask) {
        Tensor<T> out(v_cond.shape());
        T s = T(g.scale);
        for (int64_t i = 0; i < out.numel(); ++i)
            out[i] = v_uncond[i] + s * (v_cond[i] - v_uncond[i]);
        return out;
    }
    const Tensor<float>& mask = *g.spatial_mask;
    int64_t L = v_cond.dim(v_cond.rank() - 1);
    if (mask.numel() * L != v_cond.numel())
        throw ShapeError("cfg spatial mask does not match latent grid");
    Tensor<T> out = v_cond;
    T s = T(g.scale);
    for (int64_t c = 0; c < mask.numel(); ++c) {
        if (mask[c] == 0.0f) continue;
        for (int64_t l = 0; l < L; ++l) {
            int64_t i = c * L + l;
            out[i] = v_uncond[i] + s * (v_cond[i] - v_uncond[i]);
        }
    }
    return out;
}

template <class T>
Tensor<T> euler_denoise(Tensor<T> x, int64_t start_index, const NoiseSchedule& sched,
                        const VelocityFn<T>& velocity, const Tensor<float>* keep_mask,
                        const Tensor<T>* keep_values) {
    sched.validate();
    if (start_index < 0 || start_index >= sched.steps())
        throw ConfigError("euler start index out of range");
    int64_t L = x.dim(x.rank() - 1);
    if (keep_mask && keep_mask->numel() * L != x.numel())
        throw ShapeError("keep mask does not match latent grid");

    auto reimpose = [&]() {
        if (!keep_mask) return;
        for (int64_t c = 0; c < keep_mask->numel(); ++c) {
            if ((*keep_mask)[c] == 0.0f) continue;
            for (int64_t l = 0; l < L; ++l) x[c * L + l] = (*keep_values)[c * L + l];
        }
    };
    reimpose();
    for (int64_t i = start_index; i < sched.steps(); ++i) {
        double tau = sched.taus[size_t(i)];
        Tensor<T> v = velocity(x, tau);
        if (v.shape() != x.shape()) throw ShapeError("velocity shape mismatch");
        T dt = T(sched.taus[size_t(i + 1)] - tau);
        for (int64_t k = 0; k < x.numel(); ++k) x[k] += dt * v[k];
        if (!x.all_finite())
            throw NumericError("non-finite latent during denoising at step " + std::to_string(i) +
                               " (tau=" + std::to_string(tau) + ")");
        reimpose();
    }
    return x;
}

Tensor<float> build_agent_cfg_mask(const AgentFeatures& agents, int64_t latent_h,
                                   int64_t latent_w) {
    int64_t T = agents.values.dim(0), N = agents.values.dim(1), B = agents.values.dim(2);
    Tensor<float> mask({T, N, latent_h, latent_w});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t b = 0; b < B; ++b) {
                if (!agents.valid(t, n, b)) continue;
                const float* f = agents.values.data() + ((t * N + n) * B + b) * 13;
                double x1 = f[0], y1 = f[1], x2 = f[2], y2 = f[3];
                if (x2 <= x1 || y2 <= y1) continue;
                int64_t cx0 = int64_t(std::floor(x1 * double(latent_w)));
                int64_t cx1 = int64_t(std::ceil(x2 * double(latent_w)));
                int64_t cy0 = int64_t(std::floor(y1 * double(latent_h)));
                int64_t cy1 = int64_t(std::ceil(y2 * double(latent_h)));
                cx0 = std::max<int64_t>(cx0, 0);
                cy0 = std::max<int64_t>(cy0, 0);
                cx1 = std::min(cx1, latent_w);
                cy1 = std::min(cy1, latent_h);
                for (int64_t y = cy0; y < cy1; ++y)
                    for (int64_t x = cx0; x < cx1; ++x)
                        mask[((t * N + n) * latent_h + y) * latent_w + x] = 1.0f;
            }
    return mask;
}

template Tensor<float> cfg_combine(const Tensor<float>&, const Tensor<float>&,
                                   const GuidanceConfig&);
template Tensor<double> cfg_combine(const Tensor<double>&, const Tensor<double>&,
                                    const GuidanceConfig&);
template Tensor<float> euler_denoise(Tensor<float>, int64_t, const NoiseSchedule&,
                                     const VelocityFn<float>&, const Tensor<float>*,
                                     const Tensor<float>*);
template Tensor<double> euler_denoise(Tensor<double>, int64_t, const NoiseSchedule&,
                                      const VelocityFn<double>&, const Tensor<float>*,
                                      const Tensor<double>*);

}  // namespace miniwm
