#pragma once

#include <memory>
#include <string>
#include <vector>

#include "miniwm/checkpoint.hpp"
#include "miniwm/conditioning.hpp"
#include "miniwm/config.hpp"
#include "miniwm/dataset_io.hpp"
#include "miniwm/inference.hpp"
#include "miniwm/tokenizer.hpp"
#include "miniwm/training.hpp"
#include "miniwm/world_model.hpp"

namespace miniwm {

struct DatasetSplits {
    std::vector<VideoSample> train;
    std::vector<VideoSample> val;
};

// Procedural dataset with geofenced splitting; pure function of (cfg, seed).
DatasetSplits build_dataset(const RunConfig& cfg, uint64_t seed);
DatasetSplits build_dataset(const RunConfig& cfg, uint64_t seed, int64_t n_samples);

class TokenizerTrainer {
public:
    TokenizerTrainer(const RunConfig& cfg, uint64_t seed);

    void set_dataset(std::vector<VideoSample> samples);
    StepMetrics train_step();
    int64_t step() const { return step_; }

    Checkpoint make_checkpoint() const;
    void restore(const Checkpoint& ck);

    Params<float>& params() { return params_; }
    const VideoTokenizer<float>& model() const { return *model_; }
    const Teacher<float>& teacher() const { return *teacher_; }
    Params<float> ema_params() const;

private:
    RunConfig cfg_;
    uint64_t seed_;
    Params<float> params_;
    std::unique_ptr<VideoTokenizer<float>> model_;
    std::unique_ptr<Teacher<float>> teacher_;
    AdamW opt_;
    EmaState ema_;
    LrSchedule lr_;
    Rng data_rng_, noise_rng_;
    int64_t step_ = 0;
    std::vector<VideoSample> dataset_;
};

struct LatentSample {
    LatentDistribution<float> dist;  // [T,N,h,w,L] per-camera stacked
    ConditioningInput cond;          // drop-free channels
};

class WorldModelTrainer {
public:
    WorldModelTrainer(const RunConfig& cfg, uint64_t seed,
                      std::map<std::string, Tensor<float>> tokenizer_tensors);

    void set_dataset(const std::vector<VideoSample>& train, const std::vector<VideoSample>& val);
    StepMetrics train_step();
    int64_t step() const { return step_; }

    Checkpoint make_checkpoint() const;  // embeds the frozen tokenizer
    void restore(const Checkpoint& ck);

    // Paired fixed-seed validation: mean from-scratch flow loss over
    // min(n, val set size) held-out samples.
    double validation_loss(int64_t n, uint64_t seed, bool use_ema = true);

    double latent_mean() const { return latent_mean_; }
    double latent_std() const { return latent_std_; }

    Params<float>& params() { return params_; }

private:
    LatentSample encode_sample(const VideoSample& s);
    Tensor<float> draw_latents(const LatentSample& ls, Rng& rng) const;

    RunConfig cfg_;
    uint64_t seed_;
    Params<float> params_;
    Params<float> tok_params_;
    std::unique_ptr<VideoTokenizer<float>> tokenizer_;
    std::unique_ptr<WorldModel<float>> model_;
    AdamW opt_;
    EmaState ema_;
    LrSchedule lr_;
    Rng data_rng_, noise_rng_, drop_rng_;
    int64_t step_ = 0;
    double latent_mean_ = 0.0, latent_std_ = 0.32;
    std::vector<LatentSample> train_set_, val_set_;
};

// Inference over a self-contained world-model checkpoint (config and
// tokenizer embedded).
class Pipeline {
public:
    explicit Pipeline(const Checkpoint& ck, bool use_ema = true);
    static Pipeline from_file(const std::string& path, bool use_ema = true);

    const RunConfig& config() const { return cfg_; }
    double latent_mean() const { return latent_mean_; }
    double latent_std() const { return latent_std_; }

    // Normalized-latent-space single forward; exposed for CFG composition.
    Tensor<float> velocity(const Tensor<float>& x, const ConditioningInput& cond, double tau);

    // Velocity with guidance applied (two branches when scale != 1).
    Tensor<float> guided_velocity(const Tensor<float>& x, const ConditioningInput& cond,
                                  double tau, const GuidanceConfig& g);

    Tensor<float> generate_latents(const ConditioningInput& cond, const NoiseSchedule& sched,
                                   const GuidanceConfig& g, Rng& rng);
    Tensor<float> inpaint_latents(const Tensor<float>& latents, const Tensor<float>& regen_mask,
                                  const ConditioningInput& cond, const NoiseSchedule& sched,
                                  const GuidanceConfig& g, Rng& rng);
    Tensor<float> edit_latents(const Tensor<float>& latents, double tau_edit,
                               const ConditioningInput& cond, const NoiseSchedule& sched,
                               const GuidanceConfig& g, Rng& rng);
    // context: [k,N,h,w,L] normalized; one conditioning input per iteration.
    Tensor<float> rollout_latents(const Tensor<float>& context,
                                  const std::vector<ConditioningInput>& stream,
                                  int64_t iterations, const NoiseSchedule& sched,
                                  const GuidanceConfig& g, Rng& rng);

    // pixel <-> normalized latent space
    Tensor<float> encode_video(const VideoSample& s, Rng& rng);  // samples latents
    Tensor<float> encode_video_mean(const VideoSample& s);
    Tensor<float> decode_to_video(const Tensor<float>& latents_norm);  // [T*8,N,H,W,3]

    ConditioningInput conditioning_from_sample(const VideoSample& s) const {
        return make_conditioning_input(s, cfg_, cfg_.world_model.latents_t);
    }

private:
    RunConfig cfg_;
    Params<float> wm_params_, tok_params_;
    std::unique_ptr<WorldModel<float>> model_;
    std::unique_ptr<VideoTokenizer<float>> tokenizer_;
    double latent_mean_ = 0.0, latent_std_ = 0.32;
};

}  // namespace miniwm
