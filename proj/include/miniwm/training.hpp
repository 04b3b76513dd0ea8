#pragma once

#include <map>
#include <string>
#include <vector>

#include "miniwm/conditioning.hpp"
#include "miniwm/config.hpp"
#include "miniwm/nn.hpp"
#include "miniwm/tensor.hpp"

namespace miniwm {

struct LrSchedule {
    LrScheduleConfig cfg;
    int64_t total_steps = 0;

    // 0 at step 0, base_lr exactly at warmup, then cosine decay to final_lr
    // at total_steps, or (cooldown shape) constant with a linear cooldown
    // tail of cfg.cooldown steps.
    double at(int64_t step) const;
};

enum class Task { Scratch, Context, Inpaint };

Task sample_task(Rng& rng, const TrainingConfig& cfg);

// Random axis-aligned latent-space box: random camera subset, spatial
// rectangle, full time span. 1 = regenerate.
Tensor<float> make_inpaint_mask(Rng& rng, int64_t T, int64_t N, int64_t H, int64_t W);

// With prob cond_drop_all everything is dropped (the unconditional sample);
// otherwise each variable drops independently with cond_drop_each.
CondFlags conditioning_dropout(Rng& rng, const TrainingConfig& cfg);

// Per-camera keep flags under drop probability p; at least one camera stays.
std::vector<uint8_t> camera_dropout(Rng& rng, int64_t n_cams, double p);

// shadow <- d*shadow + (1-d)*params
struct EmaState {
    double decay = 0.9999;
    std::map<std::string, Tensor<float>> shadow;

    void init(const Params<float>& params);
    void update(const Params<float>& params);
    void overwrite(Params<float>& params) const;
};

// AdamW with decoupled weight decay and global-norm gradient clipping.
struct AdamW {
    double beta1 = 0.9, beta2 = 0.99, eps = 1e-8;
    double weight_decay = 0.1, clip = 1.0;
    int64_t step_count = 0;
    std::map<std::string, Tensor<float>> m, v;

    // returns the pre-clip global gradient norm
    double step(Params<float>& params, std::map<std::string, Tensor<float>>& grads, double lr);
};

double global_grad_norm(const std::map<std::string, Tensor<float>>& grads);

struct StepMetrics {
    int64_t step = 0;
    double loss = 0, grad_norm = 0, lr = 0;
    std::map<std::string, double> components;
};

}  // namespace miniwm
