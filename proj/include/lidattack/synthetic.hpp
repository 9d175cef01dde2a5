#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lidattack/scanner.hpp"
#include "lidattack/scene.hpp"
#include "lidattack/toy_detector.hpp"

// Procedural street scenes for desk-scale experiments: boxy Car / Pedestrian /
// Cyclist shapes on a flat ground plane, scanned with the LiDAR simulator.
namespace lidattack::synthetic {

inline constexpr double kGroundZ = -1.73;

TriangleMesh box_mesh(const Eigen::Vector3d& center, const Eigen::Vector3d& half_extents, double yaw);

// Mesh of a class shape standing on the ground at `ground_xy`, heading `yaw`.
TriangleMesh object_mesh(const std::string& label, const Eigen::Vector2d& ground_xy, double yaw);
// Annotation box for the same placement (shape extents plus a small margin).
BoundingBox object_box(const std::string& label, const Eigen::Vector2d& ground_xy, double yaw);

// 64-beam pattern restricted to the forward 120 degrees.
ScanConfig scene_scan_config();

// Object scanned alone at range/bearing with the given heading relative to the
// line of sight (degrees). Points are rounded to float32.
PointCloud scan_object(const std::string& label, double range, double bearing_deg, double relative_yaw_deg);

Scene make_scene(std::size_t index, std::uint64_t seed);
// Labels cycle Car, Pedestrian, Cyclist.
std::vector<Scene> make_benchmark(std::size_t count = 20, std::uint64_t seed = 20240917);

// Nine templates per class (range 5/7/9 m, relative heading 75/90/105 deg). Cached.
const std::vector<LabeledTemplate>& builtin_templates();

}  // namespace lidattack::synthetic
