#include "lidattack/synthetic.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "lidattack/errors.hpp"

namespace lidattack::synthetic {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Part {
  Eigen::Vector3d center;  // object frame, z measured from the ground
  Eigen::Vector3d half;
};

struct Shape {
  std::vector<Part> parts;
  Eigen::Vector3d dims;  // overall length, width, height
};

const Shape& shape_of(const std::string& label) {
  static const Shape car{{{{0.0, 0.0, 0.65}, {2.1, 0.9, 0.35}}, {{-0.2, 0.0, 1.25}, {1.1, 0.8, 0.25}}},
                         {4.2, 1.8, 1.5}};
  static const Shape pedestrian{{{{0.0, 0.0, 0.425}, {0.12, 0.17, 0.425}},
                                 {{0.0, 0.0, 1.15}, {0.14, 0.23, 0.3}},
                                 {{0.0, 0.0, 1.6}, {0.1, 0.1, 0.15}}},
                                {0.28, 0.46, 1.75}};
  static const Shape cyclist{{{{0.0, 0.0, 0.5}, {0.85, 0.06, 0.5}},
                              {{-0.1, 0.0, 1.25}, {0.25, 0.2, 0.3}},
                              {{0.0, 0.0, 1.65}, {0.1, 0.1, 0.1}}},
                             {1.7, 0.4, 1.75}};
  if (label == "Car") return car;
  if (label == "Pedestrian") return pedestrian;
  if (label == "Cyclist") return cyclist;
  throw ArgumentError("unknown object class: " + label);
}

Eigen::Vector2d polar(double range, double bearing_deg) {
  return {range * std::cos(bearing_deg * kDeg), range * std::sin(bearing_deg * kDeg)};
}

TriangleMesh ground_mesh() {
  const double g = kGroundZ;
  return TriangleMesh({{-45, -45, g}, {45, -45, g}, {45, 45, g}, {-45, 45, g}}, {{0, 1, 2}, {0, 2, 3}});
}

}  // namespace

TriangleMesh box_mesh(const Eigen::Vector3d& center, const Eigen::Vector3d& half_extents, double yaw) {
  const Eigen::Matrix3d r = rotation_z(yaw);
  std::vector<Eigen::Vector3d> v;
  v.reserve(8);
  // corner i has +x when bit 0 is set, +y for bit 1, +z for bit 2
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector3d local((i & 1) ? half_extents.x() : -half_extents.x(),
                                (i & 2) ? half_extents.y() : -half_extents.y(),
                                (i & 4) ? half_extents.z() : -half_extents.z());
    v.push_back(center + r * local);
  }
  std::vector<TriangleMesh::Face> f = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
                                       {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  return TriangleMesh(std::move(v), std::move(f));
}

TriangleMesh object_mesh(const std::string& label, const Eigen::Vector2d& ground_xy, double yaw) {
  const Shape& shape = shape_of(label);
  const Eigen::Matrix3d r = rotation_z(yaw);
  std::vector<TriangleMesh> parts;
  for (const auto& part : shape.parts) {
    const Eigen::Vector3d c = Eigen::Vector3d(ground_xy.x(), ground_xy.y(), kGroundZ) + r * part.center;
    parts.push_back(box_mesh(c, part.half, yaw));
  }
  return TriangleMesh::merge(parts);
}

BoundingBox object_box(const std::string& label, const Eigen::Vector2d& ground_xy, double yaw) {
  const Shape& shape = shape_of(label);
  BoundingBox b;
  b.center = {ground_xy.x(), ground_xy.y(), kGroundZ + 0.5 * shape.dims.z()};
  b.half_extents = 0.5 * shape.dims + Eigen::Vector3d(0.15, 0.15, 0.05);
  b.yaw = wrap_angle(yaw);
  return b;
}

ScanConfig scene_scan_config() {
  ScanConfig c = ScanConfig::spinning_64();
  c.span_start_deg = -60.0;
  c.span_end_deg = 60.0;
  return c;
}

PointCloud scan_object(const std::string& label, double range, double bearing_deg, double relative_yaw_deg) {
  const auto mesh = object_mesh(label, polar(range, bearing_deg), (bearing_deg + relative_yaw_deg) * kDeg);
  return round_to_float(simulate_scan(mesh, scene_scan_config()));
}

Scene make_scene(std::size_t index, std::uint64_t seed) {
  static const std::array<const char*, 3> labels = {"Car", "Pedestrian", "Cyclist"};
  std::mt19937_64 rng(seed + 0x9E3779B97F4A7C15ull * (index + 1));
  std::uniform_real_distribution<double> range_d(5.0, 9.0);
  std::uniform_real_distribution<double> bearing_d(-20.0, 20.0);
  std::uniform_real_distribution<double> rel_yaw_d(75.0, 105.0);
  std::uniform_real_distribution<double> clutter_bearing_d(-55.0, 55.0);

  Scene scene;
  scene.label = labels[index % labels.size()];
  const double range = range_d(rng);
  const double bearing = bearing_d(rng);
  const double yaw = (bearing + rel_yaw_d(rng)) * kDeg;
  const Eigen::Vector2d xy = polar(range, bearing);
  const TriangleMesh target = object_mesh(scene.label, xy, yaw);
  scene.gt_box = object_box(scene.label, xy, yaw);

  // Clutter always sits behind the target so it never occludes it.
  std::uniform_real_distribution<double> clutter_range_d(range + 3.0, 30.0);
  std::vector<TriangleMesh> parts = {target, ground_mesh()};
  for (int i = 0; i < 2; ++i) {
    const Eigen::Vector2d p = polar(clutter_range_d(rng), clutter_bearing_d(rng));
    parts.push_back(box_mesh({p.x(), p.y(), kGroundZ + 2.0}, {0.1, 0.1, 2.0}, 0.0));
  }
  {
    const Eigen::Vector2d p = polar(clutter_range_d(rng), clutter_bearing_d(rng));
    parts.push_back(box_mesh({p.x(), p.y(), kGroundZ + 0.4}, {0.5, 0.5, 0.4}, clutter_bearing_d(rng) * kDeg));
  }
  {
    const Eigen::Vector2d p = polar(clutter_range_d(rng) + 5.0, clutter_bearing_d(rng));
    parts.push_back(box_mesh({p.x(), p.y(), kGroundZ + 1.25}, {3.0, 0.15, 1.25}, clutter_bearing_d(rng) * kDeg));
  }
  const TriangleMesh world = TriangleMesh::merge(parts);
  const auto target_faces = static_cast<std::uint32_t>(target.faces().size());
  for (const auto& r : simulate_scan_returns(world, scene_scan_config())) {
    const Point3 p = make_point(r.point, 1.0);
    (r.face < target_faces ? scene.target : scene.background).push_back(p);
  }
  scene.target = round_to_float(std::move(scene.target));
  scene.background = round_to_float(std::move(scene.background));
  return scene;
}

std::vector<Scene> make_benchmark(std::size_t count, std::uint64_t seed) {
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) scenes.push_back(make_scene(i, seed));
  return scenes;
}

const std::vector<LabeledTemplate>& builtin_templates() {
  static const std::vector<LabeledTemplate> templates = [] {
    std::vector<LabeledTemplate> out;
    for (const char* label : {"Car", "Pedestrian", "Cyclist"}) {
      for (double range : {5.0, 7.0, 9.0}) {
        for (double rel : {75.0, 90.0, 105.0}) out.push_back({label, scan_object(label, range, 0.0, rel)});
      }
    }
    return out;
  }();
  return templates;
}

}  // namespace lidattack::synthetic
