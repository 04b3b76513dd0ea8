#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "miniwm/camera.hpp"
#include "miniwm/config.hpp"
#include "miniwm/nn.hpp"
#include "miniwm/render.hpp"
#include "miniwm/tensor.hpp"

namespace miniwm {

struct SymlogParams {
    double s = 1.0;
    double y_max = 1.0;
};

inline SymlogParams speed_symlog(const ConditioningConfig& c) { return {c.speed_s, c.speed_max}; }
inline SymlogParams curvature_symlog(const ConditioningConfig& c) {
    return {c.curvature_s, c.curvature_max};
}

// sign(y) * log(1 + s|y|) / log(1 + s*y_max); values beyond y_max clamp to +-1.
double symlog(double y, const SymlogParams& p);
double symlog_inverse(double v, const SymlogParams& p);

// Conditioning variables that can be dropped (for CFG training and the
// unconditional branch). Metadata fields come first, in taxonomy order.
enum CondVar : int {
    kCountry = 0,
    kWeather,
    kTimeOfDay,
    kSpeedLimit,
    kLaneCount,
    kOneWay,
    kCrossing,
    kLightState,
    kIntersection,
    kClip,
    kScenario,
    kAgents,
    kSpeed,
    kCurvature,
    kCondVarCount
};

using CondFlags = std::array<bool, kCondVarCount>;  // true = dropped

inline CondFlags no_drop() { return CondFlags{}; }
inline CondFlags all_drop() {
    CondFlags f;
    f.fill(true);
    return f;
}

struct AgentFeatures {
    Tensor<float> values;          // [T, N, B, 13]
    std::vector<uint8_t> validity;  // [T, N, B]

    bool valid(int64_t t, int64_t n, int64_t b) const {
        return validity[size_t((t * values.dim(1) + n) * values.dim(2) + b)] != 0;
    }
};

// 13 feature dims per (latent step, camera, box):
//   [0..3]  projected 2D box x1,y1,x2,y2 (normalized)
//   [4..6]  3D center in camera frame, symlog-normalized
//   [7..9]  box dimensions, log-normalized
//   [10,11] yaw as sin, cos
//   [12]    category index scaled to [0,1]
AgentFeatures build_agent_features(const std::vector<AgentTrack>& tracks,
                                   const std::vector<CameraSpec>& cams,
                                   const std::vector<int64_t>& latent_frames, int64_t width,
                                   int64_t height, int64_t max_boxes,
                                   const ConditioningConfig& cfg);

// Zero each of the 13 feature dims independently per instance with prob p.
void agent_feature_dropout(AgentFeatures& f, Rng& rng, double p);

// Per camera: sample a frame, count valid instances there, draw a kept count
// n uniform in {0..min(B, N_inst)} and keep only the first n slots (slots are
// depth-ordered) at all timesteps for that camera.
void agent_instance_dropout(AgentFeatures& f, Rng& rng);

// Deterministic unit-norm stub embedding (stand-in for CLIP / scenario
// encoders), keyed by source name and seed.
Tensor<float> stub_embedding(const std::string& source, int64_t dim, uint64_t key);

// Raw per-sample conditioning channel values, before learned encoding.
struct ConditioningInput {
    std::vector<std::array<int64_t, kMetadataFields>> metadata;  // per latent step
    Tensor<float> clip_vec;      // [clip_dim]
    Tensor<float> scenario_vec;  // [scenario_dim]
    AgentFeatures agents;
    std::vector<std::array<double, 2>> actions;  // per latent step: speed, curvature
    std::vector<double> timestamps;              // per latent step, seconds
    int64_t present_index = 0;
    std::vector<CameraSpec> cameras;
    CondFlags flags = no_drop();
};

// Derive per-latent-step conditioning from a rendered sample. Per-frame
// profiles are averaged over each temporal-factor group of frames.
ConditioningInput make_conditioning_input(const VideoSample& sample, const RunConfig& cfg,
                                          int64_t latents_t);

// Pre-perceptron timestamp features: relative times scaled to [-1,1] by the
// max offset from the present frame, then F (sin, cos) Fourier pairs.
Tensor<float> timestamp_features(const std::vector<double>& t_abs, int64_t present_index,
                                 int64_t fourier_pairs);

std::vector<double> relative_times(const std::vector<double>& t_abs, int64_t present_index);

// Learned conditioning encoders; parameters live under <prefix>.
template <class T>
struct ConditioningEncoder {
    int64_t C = 0, K = 0, n_cams = 0, max_boxes = 0, fourier_pairs = 4;
    std::vector<EmbeddingTable<T>> meta_tables;
    std::string null_tokens;  // [kCondVarCount, C] learned null replacements
    Linear<T> clip_proj, scenario_proj;
    Linear<T> agent_embed, agent_mlp;
    Linear<T> cam_intrinsics, cam_extrinsics, cam_distortion;
    Linear<T> time_fc1, time_fc2;
    Linear<T> speed_fc, curv_fc;
    Mlp<T> action_mlp;

    ConditioningEncoder() = default;
    ConditioningEncoder(Params<T>& P, const std::string& prefix, const RunConfig& cfg);

    struct Encoded {
        Val<T> tokens;      // [B, T, K, C]
        Val<T> action_emb;  // [B, T, C]
        Val<T> camera_enc;  // [B, N, C]
        Val<T> time_enc;    // [B, T, C]
    };

    Encoded encode(Ctx<T>& ctx, const std::vector<ConditioningInput>& batch,
                   const ConditioningConfig& ccfg) const;
};

extern template struct ConditioningEncoder<float>;
extern template struct ConditioningEncoder<double>;

}  // namespace miniwm
