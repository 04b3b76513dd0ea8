#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "miniwm/camera.hpp"
#include "miniwm/scene.hpp"
#include "miniwm/tensor.hpp"

namespace miniwm {

struct VideoSample {
    Tensor<float> frames;  // [T, N, H, W, 3] in [0,1]
    std::vector<CameraSpec> cameras;
    std::vector<double> timestamps;  // seconds
    SceneSpec spec;
    std::vector<uint8_t> masks;  // [T, N, H, W], 0 = background, 1+k = category k

    int64_t frames_t() const { return frames.dim(0); }
    int64_t n_cameras() const { return frames.dim(1); }
    int64_t height() const { return frames.dim(2); }
    int64_t width() const { return frames.dim(3); }

    uint8_t mask_at(int64_t t, int64_t n, int64_t y, int64_t x) const {
        return masks[size_t(((t * frames.dim(1) + n) * frames.dim(2) + y) * frames.dim(3) + x)];
    }
};

// Documented injective color transforms. A frame is rendered in near-neutral
// grays, then multiplied per channel by brightness(time) * tint(weather).
// Weather is recoverable from mean chromaticity alone; time of day from mean
// luminance once the weather tint is known.
std::array<double, 3> weather_tint(int64_t weather);
double time_brightness(int64_t time_of_day);

// Mean pre-transform luminance of rendered scenes; calibration constant for
// the time-of-day classifier.
constexpr double kNeutralSceneLuma = 0.392;

int64_t classify_weather(const Tensor<float>& frames);
int64_t classify_time_of_day(const Tensor<float>& frames, int64_t weather);

// Global lateral optical flow estimate (pixels/frame, + means image content
// moves right) over the above-horizon band of one camera's video [T,H,W,3].
double estimate_lateral_flow(const Tensor<float>& video);

// Extract one camera's stream from a sample: [T,H,W,3].
Tensor<float> camera_video(const Tensor<float>& frames, int64_t cam);

// Deterministic 2.5D sprite compositor. Lateral scene flow is proportional
// to curvature*speed, longitudinal looming to speed; agents are drawn as
// projected category-colored cuboids and masks cover exactly their pixels.
VideoSample render_scene(const SceneSpec& spec, const std::vector<CameraSpec>& cams, int64_t T_v,
                         double fps, int64_t max_agents = 16);

std::array<float, 3> agent_base_color(int64_t category);

}  // namespace miniwm
