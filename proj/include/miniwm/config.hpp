#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace miniwm {

// Categorical taxonomies for the synthetic world. Cardinalities are part of
// the config contract (embedding table sizes depend on them).
namespace taxonomy {
inline const std::vector<std::string>& countries() {
    static const std::vector<std::string> v{"UK", "US", "DE"};
    return v;
}
inline const std::vector<std::string>& weathers() {
    static const std::vector<std::string> v{"sunny", "rain", "snow", "fog", "overcast"};
    return v;
}
inline const std::vector<std::string>& times_of_day() {
    static const std::vector<std::string> v{"dawn", "day", "dusk", "night"};
    return v;
}
inline const std::vector<std::string>& light_states() {
    static const std::vector<std::string> v{"none", "red", "amber", "green"};
    return v;
}
inline const std::vector<std::string>& agent_categories() {
    static const std::vector<std::string> v{"car", "van", "pedestrian", "cyclist"};
    return v;
}
inline const std::vector<std::string>& speed_limits() {
    static const std::vector<std::string> v{"20", "30", "40", "50", "60", "70"};
    return v;
}
inline const std::vector<std::string>& intersections() {
    static const std::vector<std::string> v{"straight", "t_junction", "crossroads", "roundabout"};
    return v;
}
int64_t index_of(const std::vector<std::string>& values, const std::string& name);
}  // namespace taxonomy

struct DatasetConfig {
    int64_t frames = 24;    // T_v
    int64_t cameras = 2;    // N
    int64_t height = 64;    // H_v
    int64_t width = 128;    // W_v
    double fps = 25.0;
    int64_t max_agents = 4;     // B_max
    int64_t samples = 256;
    int64_t drive_frames = 240;  // virtual drive length for clip extraction
    int64_t min_stride = 24;     // minimum temporal stride between clips
    double map_extent = 1000.0;  // synthetic map coordinates in [-extent, extent]
    std::string val_fence = "none";  // none | half_x | disk
    double val_fence_param = 0.0;
    bool strict_fps = false;  // paper preset restricts fps to {20,25,30}
};

struct TokenizerConfig {
    // stride ladder: input temporal stride 2; blocks 2x8x8 and 2x2x2; final
    // 1x2x2; decoder mirrors it plus a 2x temporal depth-to-space head.
    int64_t temporal_factor = 8;
    int64_t spatial_factor = 32;
    int64_t stem_dim = 16;
    int64_t embed_dim = 64;
    int64_t heads = 4;
    int64_t encoder_blocks = 2;
    int64_t decoder_blocks_mid = 2;  // after first upsample (paper: 16)
    int64_t decoder_blocks_hi = 1;   // after second upsample (paper: 8)
    int64_t latent_dim = 64;         // L
    int64_t decode_window = 3;
    bool temporal_attention = true;  // ablation switch for rolling-decode checks
    double logstd_min = -30.0;
    double logstd_max = 20.0;
    // frozen teacher (stand-in for a pretrained feature extractor)
    int64_t teacher_dim = 0;  // 0 -> latent_dim
    uint64_t teacher_seed = 1234;
    int64_t teacher_temporal_factor = 4;
    // loss weights
    double w_distill = 0.1;
    double w_kl = 1e-6;
    double w_l1 = 0.2;
    double w_l2 = 2.0;
    double w_perceptual = 0.1;
};

struct ConditioningConfig {
    int64_t fourier_pairs = 4;  // F
    double speed_s = 3.6;
    double speed_max = 75.0;
    double curvature_s = 1000.0;
    double curvature_max = 0.1;
    double agent_center_s = 10.0;     // symlog scale for 3D centers (m)
    double agent_center_max = 100.0;  // saturation for 3D centers (m)
    double agent_dims_norm = 5.0;     // log normalization scale for box dims
    int64_t clip_dim = 32;
    int64_t scenario_dim = 32;
    double agent_feature_dropout = 0.3;
    uint64_t embedding_seed = 0;  // stub embedding provider stream
};

struct WorldModelConfig {
    int64_t blocks = 4;
    int64_t dim = 128;  // C
    int64_t heads = 4;
    int64_t latents_t = 3;  // T (temporal latents per window)
    int64_t mlp_ratio = 4;
    double tau_mu1 = 0.5, tau_sigma1 = 1.4, tau_p1 = 0.8;
    double tau_mu2 = -3.0, tau_sigma2 = 1.0, tau_p2 = 0.2;
};

struct LrScheduleConfig {
    std::string shape = "cosine";  // cosine | cooldown
    int64_t warmup = 2500;
    int64_t cooldown = 5000;  // cooldown shape only
    double base_lr = 5e-5;
    double final_lr = 6.5e-6;
};

struct OptimConfig {
    int64_t steps = 1000;
    int64_t batch = 2;
    double beta1 = 0.9;
    double beta2 = 0.99;
    LrScheduleConfig lr;
};

struct TrainingConfig {
    OptimConfig tokenizer{};
    OptimConfig world_model{};
    double weight_decay = 0.1;
    double grad_clip = 1.0;
    double ema_decay = 0.9999;
    double task_scratch = 0.7;
    double task_context = 0.2;
    double task_inpaint = 0.1;
    double cond_drop_all = 0.1;
    double cond_drop_each = 0.8;
    double camera_drop = 0.1;
    double latent_mean = 0.0;
    double latent_std = 0.32;
    bool latent_stats_auto = false;  // measure latent stats before world-model training
    int64_t val_samples = 16;
    double snapshot_fraction = 0.1;
    int64_t log_every = 50;
};

struct InferenceConfig {
    int64_t steps = 50;       // S
    int64_t linear_steps = 25;  // S_lin
    int64_t schedule_l = 1000;  // L in the linear segment tau_i = i/L
    double guidance_scale = 1.0;
    int64_t context_latents = 3;  // k for autoregressive rollout
};

struct MetricsConfig {
    uint64_t extractor_seed = 7777;
    int64_t extractor_dim = 64;
};

struct RunConfig {
    DatasetConfig dataset;
    TokenizerConfig tokenizer;
    ConditioningConfig conditioning;
    WorldModelConfig world_model;
    TrainingConfig training;
    InferenceConfig inference;
    MetricsConfig metrics;
    std::string preset = "toy";

    // number of cross-attention conditioning tokens per timestep:
    // metadata fields + clip + scenario + cameras * max_agents
    int64_t cond_tokens() const;
    int64_t world_model_tokens() const;  // T*N*H*W
    int64_t latent_h() const { return dataset.height / tokenizer.spatial_factor; }
    int64_t latent_w() const { return dataset.width / tokenizer.spatial_factor; }

    std::string canonical_json() const;
    std::string hash() const;

    void validate() const;
};

// number of categorical metadata fields (country, weather, time_of_day,
// speed_limit, lane_count, one_way, crossing, light_state, intersection)
constexpr int64_t kMetadataFields = 9;
constexpr int64_t kLaneCountValues = 3;  // 1..3 lanes

RunConfig preset_config(const std::string& name);
RunConfig load_config(const std::string& path_or_preset);
RunConfig parse_config_json(const std::string& json_text);
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace miniwm
