#include "miniwm/scene.hpp"

#include <cmath>

#include "miniwm/errors.hpp"

namespace miniwm {

void SceneSpec::validate(int64_t max_agents) const {
    if (speed.size() != curvature.size() || speed.size() != road.light_states.size())
        throw DataError("scene profile lengths disagree");
    for (double s : speed)
        if (s < 0.0 || s > 75.0) throw DataError("ego speed outside [0, 75] m/s");
    for (double c : curvature)
        if (std::abs(c) > 0.1) throw DataError("ego curvature outside [-0.1, 0.1] 1/m");
    if (int64_t(agents.size()) > max_agents)
        throw DataError("scene has more agents than max_agents");
    for (const auto& a : agents) {
        if (int64_t(a.centers.size()) != frames() || int64_t(a.yaws.size()) != frames())
            throw DataError("agent track length must equal video length");
        for (double d : a.dims)
            if (d <= 0.0) throw DataError("agent dimensions must be positive");
    }
}

BalanceGrid BalanceGrid::uniform() {
    BalanceGrid g;
    size_t n = taxonomy::countries().size() * taxonomy::weathers().size() *
               taxonomy::times_of_day().size();
    g.weights.assign(n, 1.0);
    return g;
}

double& BalanceGrid::at(int64_t c, int64_t w, int64_t t) {
    int64_t nw = int64_t(taxonomy::weathers().size());
    int64_t nt = int64_t(taxonomy::times_of_day().size());
    return weights[size_t((c * nw + w) * nt + t)];
}

double BalanceGrid::get(int64_t c, int64_t w, int64_t t) const {
    int64_t nw = int64_t(taxonomy::weathers().size());
    int64_t nt = int64_t(taxonomy::times_of_day().size());
    return weights[size_t((c * nw + w) * nt + t)];
}

void BalanceGrid::validate() const {
    double total = 0;
    for (double w : weights) {
        if (w < 0) throw DataError("balance grid weights must be nonnegative");
        total += w;
    }
    if (total <= 0) throw DataError("balance grid has all-zero weights");
}

std::array<int64_t, 3> BalanceGrid::sample_cell(Rng& rng) const {
    validate();
    double total = 0;
    for (double w : weights) total += w;
    double u = rng.uniform() * total;
    double acc = 0;
    int64_t nw = int64_t(taxonomy::weathers().size());
    int64_t nt = int64_t(taxonomy::times_of_day().size());
    for (size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc || i + 1 == weights.size()) {
            int64_t t = int64_t(i) % nt;
            int64_t w = (int64_t(i) / nt) % nw;
            int64_t c = int64_t(i) / (nt * nw);
            return {c, w, t};
        }
    }
    throw NumericError("balance grid sampling failed");
}

SceneSpec static_scene_spec(uint64_t seed, int64_t frames) {
    SceneSpec s;
    s.seed = seed;
    s.weather = 3;      // fog tint is identity
    s.time_of_day = 1;  // day brightness is 1
    s.speed.assign(size_t(frames), 0.0);
    s.curvature.assign(size_t(frames), 0.0);
    s.road.light_states.assign(size_t(frames), 0);
    return s;
}

namespace {

// Advance a vehicle-frame point one frame under ego motion plus the point's
// own world velocity (vehicle frame, before rotation).
std::array<double, 3> advect(const std::array<double, 3>& p, double ego_speed, double ego_curv,
                             const std::array<double, 2>& own_vel, double dt) {
    double dpsi = ego_speed * ego_curv * dt;
    double x = p[0] - ego_speed * dt + own_vel[0] * dt;
    double y = p[1] + own_vel[1] * dt;
    // rotate by -dpsi about vehicle z
    double c = std::cos(dpsi), s = std::sin(dpsi);
    return {c * x + s * y, -s * x + c * y, p[2]};
}

}  // namespace

SceneSpec sample_scene_spec(Rng& rng, const BalanceGrid& balance, const DatasetConfig& cfg) {
    auto cell = balance.sample_cell(rng);
    SceneSpec s;
    s.seed = rng.next_u64();
    s.country = cell[0];
    s.weather = cell[1];
    s.time_of_day = cell[2];
    s.map_xy = {rng.uniform(-cfg.map_extent, cfg.map_extent),
                rng.uniform(-cfg.map_extent, cfg.map_extent)};

    s.road.lanes = rng.range(1, kLaneCountValues);
    s.road.one_way = rng.bernoulli(0.25);
    s.road.crossing = rng.bernoulli(0.3);
    s.road.speed_limit = rng.range(0, int64_t(taxonomy::speed_limits().size()) - 1);
    s.road.intersection = rng.range(0, int64_t(taxonomy::intersections().size()) - 1);

    int64_t T = cfg.frames;
    double dt = 1.0 / cfg.fps;

    // light state: constant, or a single switch mid-clip
    int64_t state = rng.bernoulli(0.5) ? 0 : rng.range(1, 3);
    s.road.light_states.assign(size_t(T), state);
    if (state != 0 && rng.bernoulli(0.3)) {
        int64_t switch_at = rng.range(T / 4, 3 * T / 4);
        int64_t next = state % 3 + 1;
        for (int64_t t = switch_at; t < T; ++t) s.road.light_states[size_t(t)] = next;
    }

    // ego profiles: constant-ish speed with smooth wobble, constant curvature
    double base_speed = rng.uniform(2.0, 16.0);
    double curv = rng.uniform(-0.06, 0.06);
    s.speed.resize(size_t(T));
    s.curvature.resize(size_t(T));
    for (int64_t t = 0; t < T; ++t) {
        double wobble = 1.0 + 0.08 * std::sin(2.0 * M_PI * double(t) / double(T));
        s.speed[size_t(t)] = std::min(75.0, std::max(0.0, base_speed * wobble));
        s.curvature[size_t(t)] = curv;
    }

    // agents
    int64_t n_agents = rng.range(0, cfg.max_agents);
    for (int64_t i = 0; i < n_agents; ++i) {
        AgentTrack a;
        a.category = rng.range(0, int64_t(taxonomy::agent_categories().size()) - 1);
        switch (a.category) {
            case 0: a.dims = {4.2, 1.8, 1.5}; break;   // car
            case 1: a.dims = {6.0, 2.2, 2.4}; break;   // van
            case 2: a.dims = {0.6, 0.6, 1.75}; break;  // pedestrian
            default: a.dims = {1.8, 0.6, 1.7}; break;  // cyclist
        }
        std::array<double, 3> p{rng.uniform(8.0, 45.0), rng.uniform(-7.0, 7.0),
                                a.dims[2] * 0.5};
        std::array<double, 2> own_vel{rng.uniform(-4.0, 6.0), rng.uniform(-0.5, 0.5)};
        if (a.category >= 2) own_vel = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        double yaw = std::atan2(own_vel[1], own_vel[0] + 1e-9);
        a.centers.resize(size_t(T));
        a.yaws.assign(size_t(T), yaw);
        for (int64_t t = 0; t < T; ++t) {
            a.centers[size_t(t)] = p;
            p = advect(p, s.speed[size_t(t)], s.curvature[size_t(t)], own_vel, dt);
        }
        s.agents.push_back(std::move(a));
    }
    s.validate(cfg.max_agents);
    return s;
}

std::vector<int64_t> clip_offsets(int64_t drive_frames, int64_t stride) {
    if (stride < 1) throw DataError("clip stride must be >= 1");
    std::vector<int64_t> out;
    for (int64_t off = 0; off < drive_frames; off += stride) out.push_back(off);
    return out;
}

Split split_geofence(const SceneSpec& spec, const GeoFence& fence) {
    return fence(spec.map_xy[0], spec.map_xy[1]) ? Split::Val : Split::Train;
}

GeoFence make_fence(const std::string& kind, double param) {
    if (kind == "none") return [](double, double) { return false; };
    if (kind == "all") return [](double, double) { return true; };
    if (kind == "half_x") return [param](double x, double) { return x > param; };
    if (kind == "disk") return [param](double x, double y) { return x * x + y * y < param * param; };
    throw ConfigError("unknown geofence kind: " + kind);
}

}  // namespace miniwm
