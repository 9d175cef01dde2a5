#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Core>

namespace lidattack {

// Sensor-frame point in meters. Coordinates are held in double precision;
// the KITTI writer narrows them to float32.
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;

  Eigen::Vector3d xyz() const { return {x, y, z}; }
  bool finite() const;
  friend bool operator==(const Point3&, const Point3&) = default;
};

inline Point3 make_point(const Eigen::Vector3d& p, double intensity = 0.0) {
  return {p.x(), p.y(), p.z(), intensity};
}

using PointCloud = std::vector<Point3>;

// Oriented box; yaw is a rotation about +Z.
struct BoundingBox {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extents = Eigen::Vector3d::Ones();
  double yaw = 0.0;

  bool contains(const Eigen::Vector3d& p) const;
  double volume() const { return 8.0 * half_extents.prod(); }
};

// Wraps an angle into [-pi, pi).
double wrap_angle(double radians);

// Reads consecutive little-endian float32 (x, y, z, intensity) records.
PointCloud load_kitti_bin(const std::filesystem::path& path);
void save_kitti_bin(const PointCloud& cloud, const std::filesystem::path& path);

Eigen::Matrix3d rotation_z(double psi);
PointCloud rotate_z(const PointCloud& cloud, double psi);
// Rotates about a vertical axis through `pivot`; psi == 0 returns the input unchanged.
PointCloud rotate_z_about(const PointCloud& cloud, const Eigen::Vector3d& pivot, double psi);
PointCloud translate(const PointCloud& cloud, const Eigen::Vector3d& delta);

// Mean over `perturb` of the distance to the nearest point of `target`.
double chamfer_to_target(const PointCloud& perturb, const PointCloud& target);
// Mean Euclidean distance over unordered pairs; 0 for a single point.
double mean_pairwise_distance(const PointCloud& perturb);

// Index of the point in `cloud` closest to `p` and its distance. `cloud` must be non-empty.
std::pair<std::size_t, double> nearest_point(const PointCloud& cloud, const Eigen::Vector3d& p);

Eigen::Vector3d centroid(const PointCloud& cloud);

// Rounds every coordinate to the nearest float32 value.
PointCloud round_to_float(PointCloud cloud);

}  // namespace lidattack
