#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace miniwm {

// Pinhole camera with even-order radial distortion. Extrinsics map vehicle
// frame (x forward, y left, z up) to camera frame (x right, y down, z
// forward), stored as a row-major 4x4 rigid transform.
struct CameraSpec {
    double fx = 100.0, fy = 100.0;
    double cx = 64.0, cy = 32.0;
    std::array<double, 16> extrinsics{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    std::vector<double> distortion{0, 0, 0, 0};  // k1..kD on normalized radius

    void validate(int64_t width, int64_t height) const;

    std::array<double, 3> to_camera(const std::array<double, 3>& p_vehicle) const;
    // Projects a camera-frame point; requires z > 0.
    std::array<double, 2> project(const std::array<double, 3>& p_camera) const;
};

// Oriented cuboid in the vehicle frame.
struct Cuboid {
    std::array<double, 3> center{};  // meters
    double yaw = 0.0;                // about vehicle z
    std::array<double, 3> dims{1, 1, 1};  // length (heading), width, height
};

std::array<std::array<double, 3>, 8> cuboid_corners(const Cuboid& box);

// Axis-aligned hull of the projected corners, clipped to the image and
// normalized to [0,1]. Corners at z <= 0 are excluded; returns nullopt when
// nothing projects inside the image.
std::optional<std::array<double, 4>> project_box(const Cuboid& box, const CameraSpec& cam,
                                                 int64_t width, int64_t height);

// Default rig: camera 0 looks forward, subsequent cameras yaw right in
// equal increments. Mount height 1.4 m.
std::vector<CameraSpec> make_camera_rig(int64_t n, int64_t width, int64_t height);

CameraSpec make_camera(double fx, double fy, double cx, double cy, double yaw,
                       double height_m = 1.4, std::vector<double> distortion = {0, 0, 0, 0});

}  // namespace miniwm
