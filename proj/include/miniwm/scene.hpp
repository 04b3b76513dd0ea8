#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "miniwm/camera.hpp"
#include "miniwm/config.hpp"
#include "miniwm/rng.hpp"

namespace miniwm {

struct AgentTrack {
    int64_t category = 0;  // taxonomy::agent_categories index
    std::array<double, 3> dims{4.2, 1.8, 1.5};
    std::vector<std::array<double, 3>> centers;  // per frame, vehicle frame
    std::vector<double> yaws;                    // per frame

    Cuboid at(int64_t frame) const {
        return Cuboid{centers[size_t(frame)], yaws[size_t(frame)], dims};
    }
};

struct RoadSpec {
    int64_t lanes = 2;  // 1..kLaneCountValues
    bool one_way = false;
    bool crossing = false;
    int64_t speed_limit = 1;                 // taxonomy::speed_limits index
    int64_t intersection = 0;                // taxonomy::intersections index
    std::vector<int64_t> light_states;       // per frame, taxonomy::light_states
};

struct SceneSpec {
    uint64_t seed = 0;
    int64_t country = 0;
    int64_t weather = 0;
    int64_t time_of_day = 1;
    RoadSpec road;
    std::vector<double> speed;      // per frame, m/s in [0, 75]
    std::vector<double> curvature;  // per frame, 1/m in [-0.1, 0.1]
    std::vector<AgentTrack> agents;
    std::array<double, 2> map_xy{0, 0};  // synthetic map coordinate for geofencing

    int64_t frames() const { return int64_t(speed.size()); }
    void validate(int64_t max_agents) const;
};

// Target joint frequencies over country x weather x time_of_day.
struct BalanceGrid {
    std::vector<double> weights;  // [country][weather][time], flattened

    static BalanceGrid uniform();
    double& at(int64_t c, int64_t w, int64_t t);
    double get(int64_t c, int64_t w, int64_t t) const;
    void validate() const;
    std::array<int64_t, 3> sample_cell(Rng& rng) const;
};

// A static scene spec with the given frame count: zero ego motion, no
// agents, constant light state. Useful as a base for tests and demos.
SceneSpec static_scene_spec(uint64_t seed, int64_t frames);

SceneSpec sample_scene_spec(Rng& rng, const BalanceGrid& balance, const DatasetConfig& cfg);

// Clip start offsets within a synthetic drive under a minimum temporal
// stride: {0, stride, 2*stride, ...} below drive_frames.
std::vector<int64_t> clip_offsets(int64_t drive_frames, int64_t stride);

enum class Split { Train, Val };
using GeoFence = std::function<bool(double, double)>;

Split split_geofence(const SceneSpec& spec, const GeoFence& fence);
GeoFence make_fence(const std::string& kind, double param);

}  // namespace miniwm
