#include "miniwm/camera.hpp"

#include <algorithm>
#include <cmath>

#include "miniwm/errors.hpp"

namespace miniwm {

void CameraSpec::validate(int64_t width, int64_t height) const {
    if (fx <= 0 || fy <= 0) throw DataError("camera focal lengths must be positive");
    if (cx < 0 || cx >= double(width) || cy < 0 || cy >= double(height))
        throw DataError("camera principal point outside image");
    // rotation block orthonormality within 1e-6
    const auto& e = extrinsics;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double dot = 0;
            for (int k = 0; k < 3; ++k) dot += e[i * 4 + k] * e[j * 4 + k];
            double want = i == j ? 1.0 : 0.0;
            if (std::abs(dot - want) > 1e-6)
                throw DataError("camera extrinsics rotation block is not orthonormal");
        }
    }
}

std::array<double, 3> CameraSpec::to_camera(const std::array<double, 3>& p) const {
    const auto& e = extrinsics;
    std::array<double, 3> out{};
    for (int i = 0; i < 3; ++i)
        out[i] = e[i * 4 + 0] * p[0] + e[i * 4 + 1] * p[1] + e[i * 4 + 2] * p[2] + e[i * 4 + 3];
    return out;
}

std::array<double, 2> CameraSpec::project(const std::array<double, 3>& p) const {
    double xn = p[0] / p[2];
    double yn = p[1] / p[2];
    double r2 = xn * xn + yn * yn;
    double f = 1.0, rp = 1.0;
    for (double k : distortion) {
        rp *= r2;
        f += k * rp;
    }
    return {fx * xn * f + cx, fy * yn * f + cy};
}

std::array<std::array<double, 3>, 8> cuboid_corners(const Cuboid& box) {
    double cs = std::cos(box.yaw), sn = std::sin(box.yaw);
    std::array<std::array<double, 3>, 8> out;
    int idx = 0;
    for (int sx : {-1, 1})
        for (int sy : {-1, 1})
            for (int sz : {-1, 1}) {
                double lx = 0.5 * sx * box.dims[0];
                double ly = 0.5 * sy * box.dims[1];
                double lz = 0.5 * sz * box.dims[2];
                out[idx++] = {box.center[0] + cs * lx - sn * ly,
                              box.center[1] + sn * lx + cs * ly, box.center[2] + lz};
            }
    return out;
}

std::optional<std::array<double, 4>> project_box(const Cuboid& box, const CameraSpec& cam,
                                                 int64_t width, int64_t height) {
    double x1 = 1e30, y1 = 1e30, x2 = -1e30, y2 = -1e30;
    int in_front = 0;
    for (const auto& corner : cuboid_corners(box)) {
        auto pc = cam.to_camera(corner);
        if (pc[2] <= 0.0) continue;  // on or behind the camera plane
        auto uv = cam.project(pc);
        x1 = std::min(x1, uv[0]);
        y1 = std::min(y1, uv[1]);
        x2 = std::max(x2, uv[0]);
        y2 = std::max(y2, uv[1]);
        ++in_front;
    }
    if (in_front == 0) return std::nullopt;
    x1 = std::max(x1, 0.0);
    y1 = std::max(y1, 0.0);
    x2 = std::min(x2, double(width));
    y2 = std::min(y2, double(height));
    if (x1 >= x2 || y1 >= y2) return std::nullopt;
    return std::array<double, 4>{x1 / double(width), y1 / double(height), x2 / double(width),
                                 y2 / double(height)};
}

CameraSpec make_camera(double fx, double fy, double cx, double cy, double yaw, double height_m,
                       std::vector<double> distortion) {
    CameraSpec cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = cx;
    cam.cy = cy;
    cam.distortion = std::move(distortion);
    // vehicle (x fwd, y left, z up) -> camera (x right, y down, z fwd),
    // after rotating the view by `yaw` about vehicle z.
    double c = std::cos(yaw), s = std::sin(yaw);
    // camera x_r = -y_yawed, y_d = -z, z_f = x_yawed, with the yawed frame
    // x' = c x + s y, y' = -s x + c y.
    cam.extrinsics = {s, -c, 0, 0,   // x_right
                      0, 0, -1, height_m,  // y_down
                      c, s, 0, 0,    // z_forward
                      0, 0, 0, 1};
    return cam;
}

std::vector<CameraSpec> make_camera_rig(int64_t n, int64_t width, int64_t height) {
    std::vector<CameraSpec> rig;
    double f = 0.9 * double(width) / 2.0;
    for (int64_t i = 0; i < n; ++i) {
        double yaw = -0.45 * double(i);  // fan out to the right
        rig.push_back(make_camera(f, f, double(width) / 2.0, double(height) / 2.0, yaw));
    }
    return rig;
}

}  // namespace miniwm
