#include "miniwm/render.hpp"

#include <algorithm>
#include <cmath>

#include "miniwm/errors.hpp"

namespace miniwm {

std::array<double, 3> weather_tint(int64_t weather) {
    switch (weather) {
        case 0: return {1.15, 1.05, 0.80};  // sunny
        case 1: return {0.78, 0.90, 1.12};  // rain
        case 2: return {1.02, 1.10, 1.18};  // snow
        case 3: return {1.00, 1.00, 1.00};  // fog
        case 4: return {0.88, 1.02, 0.88};  // overcast
        default: throw DataError("unknown weather index");
    }
}

double time_brightness(int64_t time_of_day) {
    switch (time_of_day) {
        case 0: return 0.70;  // dawn
        case 1: return 1.00;  // day
        case 2: return 0.85;  // dusk
        case 3: return 0.50;  // night
        default: throw DataError("unknown time_of_day index");
    }
}

std::array<float, 3> agent_base_color(int64_t category) {
    switch (category) {
        case 0: return {0.16f, 0.26f, 0.62f};  // car
        case 1: return {0.48f, 0.18f, 0.55f};  // van
        case 2: return {0.66f, 0.32f, 0.14f};  // pedestrian
        default: return {0.10f, 0.52f, 0.44f};  // cyclist
    }
}

namespace {

struct Stripe {
    double angle;  // panorama angle, radians
    double width;  // angular width
    double height; // fraction of rows above horizon
    double value;  // gray value (pre-transform)
};

std::vector<Stripe> make_stripes(uint64_t seed) {
    Rng rng(seed ^ 0xa5a5a5a5ULL);
    const int n = 16;
    std::vector<Stripe> st(n);
    double mean = 0;
    for (int i = 0; i < n; ++i) {
        st[i].angle = (double(i) + rng.uniform(0.1, 0.9)) * (2.0 * M_PI / n);
        st[i].width = rng.uniform(0.05, 0.16);
        st[i].height = rng.uniform(0.35, 0.95);
        st[i].value = rng.uniform(0.22, 0.58);
        mean += st[i].value;
    }
    // fix the palette mean so scene luminance stays calibration-stable
    mean /= n;
    for (auto& s : st) s.value += 0.40 - mean;
    return st;
}

double wrap_angle(double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a < -M_PI) a += 2.0 * M_PI;
    return a;
}

struct FrameCanvas {
    int64_t H, W;
    float* rgb;     // [H,W,3]
    uint8_t* mask;  // [H,W]

    void fill_rect(int64_t x0, int64_t y0, int64_t x1, int64_t y1, float r, float g, float b,
                   int mask_value = -1) {
        x0 = std::max<int64_t>(x0, 0);
        y0 = std::max<int64_t>(y0, 0);
        x1 = std::min(x1, W);
        y1 = std::min(y1, H);
        for (int64_t y = y0; y < y1; ++y)
            for (int64_t x = x0; x < x1; ++x) {
                float* p = rgb + (y * W + x) * 3;
                p[0] = r;
                p[1] = g;
                p[2] = b;
                if (mask_value >= 0) mask[y * W + x] = uint8_t(mask_value);
            }
    }
};

}  // namespace

VideoSample render_scene(const SceneSpec& spec, const std::vector<CameraSpec>& cams, int64_t T_v,
                         double fps, int64_t max_agents) {
    if (fps <= 0) throw DataError("fps must be positive");
    if (int64_t(spec.agents.size()) > max_agents)
        throw DataError("render_scene: agent count exceeds max_agents");
    if (spec.frames() < T_v) throw DataError("scene profiles shorter than requested frames");
    spec.validate(max_agents);

    int64_t N = int64_t(cams.size());
    if (N == 0) throw DataError("render_scene needs at least one camera");
    // image dims come from camera 0's principal point convention
    int64_t W = int64_t(std::lround(cams[0].cx * 2.0));
    int64_t H = int64_t(std::lround(cams[0].cy * 2.0));
    for (const auto& c : cams) c.validate(W, H);

    VideoSample out;
    out.frames = Tensor<float>({T_v, N, H, W, 3});
    out.masks.assign(size_t(T_v * N * H * W), 0);
    out.cameras = cams;
    out.spec = spec;
    out.spec.speed.resize(size_t(T_v));
    out.spec.curvature.resize(size_t(T_v));
    out.spec.road.light_states.resize(size_t(T_v));
    for (int64_t t = 0; t < T_v; ++t) out.timestamps.push_back(double(t) / fps);

    auto stripes = make_stripes(spec.seed);
    double dt = 1.0 / fps;
    const double cam_h = 1.4;
    auto tint = weather_tint(spec.weather);
    float bright = float(time_brightness(spec.time_of_day));
    std::array<float, 3> xf{float(bright * tint[0]), float(bright * tint[1]),
                            float(bright * tint[2])};

    // ego state accumulated over frames
    double psi = 0.0, dist = 0.0;

    for (int64_t t = 0; t < T_v; ++t) {
        double speed = spec.speed[size_t(t)];
        double curv = spec.curvature[size_t(t)];

        for (int64_t n = 0; n < N; ++n) {
            const CameraSpec& cam = cams[size_t(n)];
            double cam_yaw = std::atan2(cam.extrinsics[9], cam.extrinsics[8]);
            FrameCanvas canvas{H, W,
                               out.frames.data() + ((t * N + n) * H * W) * 3,
                               out.masks.data() + size_t((t * N + n) * H * W)};

            int64_t horizon = int64_t(std::lround(cam.cy));

            // sky with a mild vertical gradient
            for (int64_t y = 0; y < horizon; ++y) {
                float v = 0.58f - 0.06f * float(y) / float(std::max<int64_t>(horizon, 1));
                canvas.fill_rect(0, y, W, y + 1, v, v, v);
            }
            // ground
            canvas.fill_rect(0, horizon, W, H, 0.30f, 0.30f, 0.30f);

            // panorama stripes (lateral flow carrier): angular position
            // shifts with accumulated ego yaw.
            for (const auto& s : stripes) {
                double a = wrap_angle(s.angle - psi - cam_yaw);
                if (std::abs(a) > 1.1) continue;
                double u = cam.cx + cam.fx * std::tan(a);
                double du = cam.fx * s.width * 0.5;
                int64_t top = horizon - int64_t(s.height * 0.8 * double(horizon));
                float v = float(s.value);
                canvas.fill_rect(int64_t(u - du), top, int64_t(u + du), horizon, v, v, v);
            }

            // road surface: perspective band below the horizon, bending with
            // current curvature.
            double road_half = 1.5 * double(spec.road.lanes);
            for (int64_t y = horizon + 1; y < H; ++y) {
                double z = cam.fy * cam_h / (double(y) - cam.cy);
                double bend = 0.5 * curv * z * z;
                double uc = cam.cx + cam.fx * (std::tan(-cam_yaw) - bend / z);
                double half = cam.fx * road_half / z;
                canvas.fill_rect(int64_t(uc - half), y, int64_t(uc + half), y + 1, 0.34f, 0.34f,
                                 0.34f);
            }

            // lane dashes streaming toward the viewer (looming ~ speed)
            const double dash_gap = 4.0, road_cycle = 48.0;
            std::array<float, 3> dash_col{0.78f, 0.78f, 0.78f};
            if (spec.country == 1) dash_col = {0.80f, 0.72f, 0.42f};  // US center line
            for (int m = 0; m < 12; ++m) {
                double zr = std::fmod(double(m) * dash_gap - dist, road_cycle);
                if (zr < 0) zr += road_cycle;
                double z = 3.0 + zr;
                double bend = 0.5 * curv * z * z;
                double u = cam.cx + cam.fx * (std::tan(-cam_yaw) - bend / z);
                double y = cam.cy + cam.fy * cam_h / z;
                double len = cam.fy * 1.2 / z, wdu = std::max(1.0, cam.fx * 0.12 / z);
                canvas.fill_rect(int64_t(u - wdu), int64_t(y - len), int64_t(u + wdu), int64_t(y),
                                 dash_col[0], dash_col[1], dash_col[2]);
            }

            // pedestrian crossing band cycling with distance
            if (spec.road.crossing) {
                double zr = std::fmod(30.0 - dist, road_cycle);
                if (zr < 0) zr += road_cycle;
                double z = 3.0 + zr;
                double y0 = cam.cy + cam.fy * cam_h / (z + 1.6);
                double y1 = cam.cy + cam.fy * cam_h / z;
                double bend = 0.5 * curv * z * z;
                double uc = cam.cx + cam.fx * (std::tan(-cam_yaw) - bend / z);
                double half = cam.fx * road_half / z;
                int stripes_n = 8;
                for (int k = 0; k < stripes_n; ++k) {
                    if (k % 2) continue;
                    double u0 = uc - half + 2.0 * half * double(k) / stripes_n;
                    double u1 = uc - half + 2.0 * half * double(k + 1) / stripes_n;
                    canvas.fill_rect(int64_t(u0), int64_t(y0), int64_t(u1), int64_t(y1), 0.72f,
                                     0.72f, 0.72f);
                }
            }

            // traffic light box (drawn only for an active state)
            int64_t light = spec.road.light_states[size_t(t)];
            if (light != 0) {
                std::array<float, 3> col = light == 1   ? std::array<float, 3>{0.70f, 0.08f, 0.08f}
                                           : light == 2 ? std::array<float, 3>{0.70f, 0.52f, 0.06f}
                                                        : std::array<float, 3>{0.08f, 0.60f, 0.12f};
                int64_t bx = int64_t(0.84 * double(W)), by = int64_t(0.22 * double(H));
                canvas.fill_rect(bx, by, bx + std::max<int64_t>(W / 32, 2),
                                 by + std::max<int64_t>(H / 16, 2), col[0], col[1], col[2]);
            }

            // agents, far to near so closer boxes overwrite
            std::vector<size_t> order(spec.agents.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
                return spec.agents[a].centers[size_t(t)][0] > spec.agents[b].centers[size_t(t)][0];
            });
            for (size_t i : order) {
                const AgentTrack& agent = spec.agents[i];
                auto box = project_box(agent.at(t), cam, W, H);
                if (!box) continue;
                auto col = agent_base_color(agent.category);
                int64_t x0 = int64_t((*box)[0] * double(W)), y0 = int64_t((*box)[1] * double(H));
                int64_t x1 = int64_t(std::ceil((*box)[2] * double(W)));
                int64_t y1 = int64_t(std::ceil((*box)[3] * double(H)));
                canvas.fill_rect(x0, y0, x1, y1, col[0], col[1], col[2], int(agent.category) + 1);
            }
        }

        psi += speed * curv * dt;
        dist += speed * dt;
    }

    // injective weather/time transform
    float* p = out.frames.data();
    for (int64_t i = 0; i < out.frames.numel(); i += 3) {
        p[i] = std::min(1.0f, std::max(0.0f, p[i] * xf[0]));
        p[i + 1] = std::min(1.0f, std::max(0.0f, p[i + 1] * xf[1]));
        p[i + 2] = std::min(1.0f, std::max(0.0f, p[i + 2] * xf[2]));
    }
    return out;
}

namespace {

std::array<double, 3> mean_rgb(const Tensor<float>& frames) {
    std::array<double, 3> m{0, 0, 0};
    int64_t n = frames.numel() / 3;
    const float* p = frames.data();
    for (int64_t i = 0; i < n; ++i) {
        m[0] += p[3 * i];
        m[1] += p[3 * i + 1];
        m[2] += p[3 * i + 2];
    }
    for (auto& v : m) v /= double(n);
    return m;
}

}  // namespace

int64_t classify_weather(const Tensor<float>& frames) {
    auto m = mean_rgb(frames);
    double luma = (m[0] + m[1] + m[2]) / 3.0;
    if (luma <= 0) return 3;
    int64_t best = 0;
    double best_d = 1e30;
    for (int64_t w = 0; w < int64_t(taxonomy::weathers().size()); ++w) {
        auto t = weather_tint(w);
        double tm = (t[0] + t[1] + t[2]) / 3.0;
        double d = 0;
        for (int c = 0; c < 3; ++c) {
            double diff = m[c] / luma - t[c] / tm;
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = w;
        }
    }
    return best;
}

int64_t classify_time_of_day(const Tensor<float>& frames, int64_t weather) {
    auto m = mean_rgb(frames);
    double luma = (m[0] + m[1] + m[2]) / 3.0;
    auto t = weather_tint(weather);
    double tint_mean = (t[0] + t[1] + t[2]) / 3.0;
    int64_t best = 0;
    double best_d = 1e30;
    for (int64_t b = 0; b < int64_t(taxonomy::times_of_day().size()); ++b) {
        double expect = time_brightness(b) * tint_mean * kNeutralSceneLuma;
        double d = std::abs(luma - expect);
        if (d < best_d) {
            best_d = d;
            best = b;
        }
    }
    return best;
}

Tensor<float> camera_video(const Tensor<float>& frames, int64_t cam) {
    int64_t T = frames.dim(0), N = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
    Tensor<float> out({T, H, W, 3});
    for (int64_t t = 0; t < T; ++t)
        std::copy(frames.data() + ((t * N + cam) * H * W) * 3,
                  frames.data() + ((t * N + cam + 1) * H * W) * 3,
                  out.data() + (t * H * W) * 3);
    return out;
}

double estimate_lateral_flow(const Tensor<float>& video) {
    // single global Lucas-Kanade step on the above-horizon band
    int64_t T = video.dim(0), H = video.dim(1), W = video.dim(2);
    int64_t y1 = H / 2;
    double num = 0, den = 0;
    auto gray = [&](int64_t t, int64_t y, int64_t x) {
        const float* p = video.data() + ((t * H + y) * W + x) * 3;
        return double(p[0] + p[1] + p[2]) / 3.0;
    };
    for (int64_t t = 0; t + 1 < T; ++t)
        for (int64_t y = 0; y < y1; ++y)
            for (int64_t x = 1; x + 1 < W; ++x) {
                double ix = 0.5 * (gray(t, y, x + 1) - gray(t, y, x - 1));
                double it = gray(t + 1, y, x) - gray(t, y, x);
                num += ix * it;
                den += ix * ix;
            }
    if (den < 1e-12) return 0.0;
    return -num / den;
}

}  // namespace miniwm
