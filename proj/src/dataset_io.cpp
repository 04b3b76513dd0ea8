#include "miniwm/dataset_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "miniwm/errors.hpp"
#include "miniwm/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace miniwm {

namespace {

std::string frame_name(int64_t t) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d.png", int(t));
    return buf;
}

std::vector<std::array<uint8_t, 3>> mask_palette() {
    std::vector<std::array<uint8_t, 3>> pal{{0, 0, 0}};
    for (int64_t k = 0; k < int64_t(taxonomy::agent_categories().size()); ++k) {
        auto c = agent_base_color(k);
        pal.push_back({uint8_t(c[0] * 255), uint8_t(c[1] * 255), uint8_t(c[2] * 255)});
    }
    return pal;
}

json camera_to_json(const CameraSpec& c) {
    return json{{"fx", c.fx},
                {"fy", c.fy},
                {"cx", c.cx},
                {"cy", c.cy},
                {"extrinsics", c.extrinsics},
                {"distortion", c.distortion}};
}

CameraSpec camera_from_json(const json& j) {
    CameraSpec c;
    c.fx = j.at("fx");
    c.fy = j.at("fy");
    c.cx = j.at("cx");
    c.cy = j.at("cy");
    auto e = j.at("extrinsics").get<std::vector<double>>();
    if (e.size() != 16) throw DataError("bad extrinsics in labels.json");
    std::copy(e.begin(), e.end(), c.extrinsics.begin());
    c.distortion = j.at("distortion").get<std::vector<double>>();
    return c;
}

}  // namespace

std::string sample_dir_name(int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05d", int(index));
    return buf;
}

void write_sample(const std::string& dir, const VideoSample& s) {
    int64_t T = s.frames_t(), N = s.n_cameras(), H = s.height(), W = s.width();
    fs::create_directories(dir);

    std::vector<uint8_t> rgb(size_t(H * W * 3));
    for (int64_t n = 0; n < N; ++n) {
        fs::create_directories(fs::path(dir) / "frames" / ("cam" + std::to_string(n)));
        fs::create_directories(fs::path(dir) / "masks" / ("cam" + std::to_string(n)));
        for (int64_t t = 0; t < T; ++t) {
            const float* src = s.frames.data() + ((t * N + n) * H * W) * 3;
            for (size_t i = 0; i < rgb.size(); ++i)
                rgb[i] = uint8_t(std::lround(std::min(1.0f, std::max(0.0f, src[i])) * 255.0f));
            write_png_rgb((fs::path(dir) / "frames" / ("cam" + std::to_string(n)) / frame_name(t))
                              .string(),
                          int(W), int(H), rgb.data());
            write_png_indexed(
                (fs::path(dir) / "masks" / ("cam" + std::to_string(n)) / frame_name(t)).string(),
                int(W), int(H), s.masks.data() + size_t((t * N + n) * H * W), mask_palette());
        }
    }

    json j;
    j["seed"] = s.spec.seed;
    j["country"] = taxonomy::countries()[size_t(s.spec.country)];
    j["weather"] = taxonomy::weathers()[size_t(s.spec.weather)];
    j["time_of_day"] = taxonomy::times_of_day()[size_t(s.spec.time_of_day)];
    j["map_xy"] = s.spec.map_xy;
    j["road"] = {{"lanes", s.spec.road.lanes},
                 {"one_way", s.spec.road.one_way},
                 {"crossing", s.spec.road.crossing},
                 {"speed_limit", taxonomy::speed_limits()[size_t(s.spec.road.speed_limit)]},
                 {"intersection", taxonomy::intersections()[size_t(s.spec.road.intersection)]},
                 {"light_states", s.spec.road.light_states}};
    j["speed"] = s.spec.speed;
    j["curvature"] = s.spec.curvature;
    j["timestamps"] = s.timestamps;
    json agents = json::array();
    for (const auto& a : s.spec.agents) {
        json boxes = json::array();
        for (int64_t t = 0; t < T; ++t) {
            json per_cam = json::array();
            for (int64_t n = 0; n < N; ++n) {
                auto b = project_box(a.at(t), s.cameras[size_t(n)], W, H);
                per_cam.push_back(b ? json(*b) : json(nullptr));
            }
            boxes.push_back(per_cam);
        }
        agents.push_back(json{{"category", taxonomy::agent_categories()[size_t(a.category)]},
                              {"dims", a.dims},
                              {"centers", a.centers},
                              {"yaws", a.yaws},
                              {"boxes_2d", boxes}});
    }
    j["agents"] = agents;
    json cams = json::array();
    for (const auto& c : s.cameras) cams.push_back(camera_to_json(c));
    j["cameras"] = cams;

    std::ofstream f(fs::path(dir) / "labels.json");
    f << j.dump(1);
    if (!f) throw DataError("failed to write labels.json in " + dir);
}

VideoSample read_sample(const std::string& dir) {
    std::ifstream lf(fs::path(dir) / "labels.json");
    if (!lf) throw DataError("missing labels.json in " + dir);
    json j;
    try {
        lf >> j;
    } catch (const json::exception& e) {
        throw DataError("bad labels.json in " + dir + ": " + e.what());
    }

    VideoSample s;
    s.spec.seed = j.at("seed");
    s.spec.country = taxonomy::index_of(taxonomy::countries(), j.at("country"));
    s.spec.weather = taxonomy::index_of(taxonomy::weathers(), j.at("weather"));
    s.spec.time_of_day = taxonomy::index_of(taxonomy::times_of_day(), j.at("time_of_day"));
    s.spec.map_xy = j.at("map_xy");
    const json& road = j.at("road");
    s.spec.road.lanes = road.at("lanes");
    s.spec.road.one_way = road.at("one_way");
    s.spec.road.crossing = road.at("crossing");
    s.spec.road.speed_limit = taxonomy::index_of(taxonomy::speed_limits(), road.at("speed_limit"));
    s.spec.road.intersection =
        taxonomy::index_of(taxonomy::intersections(), road.at("intersection"));
    s.spec.road.light_states = road.at("light_states").get<std::vector<int64_t>>();
    s.spec.speed = j.at("speed").get<std::vector<double>>();
    s.spec.curvature = j.at("curvature").get<std::vector<double>>();
    s.timestamps = j.at("timestamps").get<std::vector<double>>();
    for (const json& aj : j.at("agents")) {
        AgentTrack a;
        a.category = taxonomy::index_of(taxonomy::agent_categories(), aj.at("category"));
        a.dims = aj.at("dims");
        a.centers = aj.at("centers").get<std::vector<std::array<double, 3>>>();
        a.yaws = aj.at("yaws").get<std::vector<double>>();
        s.spec.agents.push_back(std::move(a));
    }
    for (const json& cj : j.at("cameras")) s.cameras.push_back(camera_from_json(cj));

    int64_t N = int64_t(s.cameras.size());
    int64_t T = int64_t(s.timestamps.size());
    PngImage first = read_png((fs::path(dir) / "frames" / "cam0" / "0000.png").string());
    int64_t H = first.height, W = first.width;
    s.frames = Tensor<float>({T, N, H, W, 3});
    s.masks.assign(size_t(T * N * H * W), 0);
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t t = 0; t < T; ++t) {
            PngImage img = read_png(
                (fs::path(dir) / "frames" / ("cam" + std::to_string(n)) / frame_name(t)).string());
            if (img.width != W || img.height != H || img.channels != 3)
                throw DataError("inconsistent frame dims in " + dir);
            float* dst = s.frames.data() + ((t * N + n) * H * W) * 3;
            for (size_t i = 0; i < img.pixels.size(); ++i) dst[i] = float(img.pixels[i]) / 255.0f;
            fs::path mp = fs::path(dir) / "masks" / ("cam" + std::to_string(n)) / frame_name(t);
            if (fs::exists(mp)) {
                PngImage m = read_png(mp.string());
                if (m.width != W || m.height != H) throw DataError("mask dims mismatch in " + dir);
                std::copy(m.pixels.begin(), m.pixels.end(),
                          s.masks.begin() + size_t((t * N + n) * H * W));
            }
        }
    }
    return s;
}

std::vector<std::string> list_sample_dirs(const std::string& root) {
    if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root);
    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / "labels.json")) dirs.push_back(e.path().string());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

}  // namespace miniwm
