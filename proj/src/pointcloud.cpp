#include "lidattack/pointcloud.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>

#include <Eigen/Geometry>

#include "lidattack/errors.hpp"

namespace lidattack {

namespace {

float read_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

void write_f32_le(unsigned char* p, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  p[0] = static_cast<unsigned char>(bits & 0xff);
  p[1] = static_cast<unsigned char>((bits >> 8) & 0xff);
  p[2] = static_cast<unsigned char>((bits >> 16) & 0xff);
  p[3] = static_cast<unsigned char>((bits >> 24) & 0xff);
}

}  // namespace

bool Point3::finite() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && std::isfinite(intensity);
}

bool BoundingBox::contains(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d d = p - center;
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  // world -> box frame is Rz(-yaw)
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  return std::abs(lx) <= half_extents.x() && std::abs(ly) <= half_extents.y() &&
         std::abs(d.z()) <= half_extents.z();
}

double wrap_angle(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(radians + std::numbers::pi, two_pi);
  if (r < 0) r += two_pi;
  return r - std::numbers::pi;
}

PointCloud load_kitti_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open point cloud file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure: " + path.string());
  if (bytes.size() % 16 != 0) {
    throw MalformedFileError(path.string() + ": length " + std::to_string(bytes.size()) +
                             " is not a multiple of 16");
  }
  PointCloud cloud;
  cloud.reserve(bytes.size() / 16);
  for (std::size_t i = 0; i < bytes.size() / 16; ++i) {
    const unsigned char* rec = bytes.data() + 16 * i;
    Point3 p{read_f32_le(rec), read_f32_le(rec + 4), read_f32_le(rec + 8), read_f32_le(rec + 12)};
    if (!p.finite()) {
      throw MalformedRecordError(path.string() + ": non-finite value in record " + std::to_string(i), i);
    }
    cloud.push_back(p);
  }
  return cloud;
}

void save_kitti_bin(const PointCloud& cloud, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes(cloud.size() * 16);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    unsigned char* rec = bytes.data() + 16 * i;
    write_f32_le(rec, static_cast<float>(cloud[i].x));
    write_f32_le(rec + 4, static_cast<float>(cloud[i].y));
    write_f32_le(rec + 8, static_cast<float>(cloud[i].z));
    write_f32_le(rec + 12, static_cast<float>(cloud[i].intensity));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure: " + path.string());
}

Eigen::Matrix3d rotation_z(double psi) {
  const double c = std::cos(psi);
  const double s = std::sin(psi);
  Eigen::Matrix3d r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

PointCloud rotate_z(const PointCloud& cloud, double psi) {
  const double c = std::cos(psi);
  const double s = std::sin(psi);
  PointCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) {
    out.push_back({c * p.x - s * p.y, s * p.x + c * p.y, p.z, p.intensity});
  }
  return out;
}

PointCloud rotate_z_about(const PointCloud& cloud, const Eigen::Vector3d& pivot, double psi) {
  if (psi == 0.0) return cloud;
  const double c = std::cos(psi);
  const double s = std::sin(psi);
  PointCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) {
    const double dx = p.x - pivot.x();
    const double dy = p.y - pivot.y();
    out.push_back({pivot.x() + c * dx - s * dy, pivot.y() + s * dx + c * dy, p.z, p.intensity});
  }
  return out;
}

PointCloud translate(const PointCloud& cloud, const Eigen::Vector3d& delta) {
  PointCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) {
    out.push_back({p.x + delta.x(), p.y + delta.y(), p.z + delta.z(), p.intensity});
  }
  return out;
}

std::pair<std::size_t, double> nearest_point(const PointCloud& cloud, const Eigen::Vector3d& p) {
  if (cloud.empty()) throw ArgumentError("nearest_point: empty cloud");
  std::size_t best = 0;
  double best_sq = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double dx = cloud[i].x - p.x();
    const double dy = cloud[i].y - p.y();
    const double dz = cloud[i].z - p.z();
    const double sq = dx * dx + dy * dy + dz * dz;
    if (sq < best_sq) {
      best_sq = sq;
      best = i;
    }
  }
  return {best, std::sqrt(best_sq)};
}

double chamfer_to_target(const PointCloud& perturb, const PointCloud& target) {
  if (perturb.empty() || target.empty()) throw ArgumentError("chamfer_to_target: empty input");
  double sum = 0.0;
  for (const auto& p : perturb) sum += nearest_point(target, p.xyz()).second;
  return sum / static_cast<double>(perturb.size());
}

double mean_pairwise_distance(const PointCloud& perturb) {
  if (perturb.empty()) throw ArgumentError("mean_pairwise_distance: empty input");
  const std::size_t n = perturb.size();
  if (n == 1) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) sum += (perturb[i].xyz() - perturb[j].xyz()).norm();
  }
  return sum / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

Eigen::Vector3d centroid(const PointCloud& cloud) {
  if (cloud.empty()) throw ArgumentError("centroid: empty cloud");
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const auto& p : cloud) sum += p.xyz();
  return sum / static_cast<double>(cloud.size());
}

PointCloud round_to_float(PointCloud cloud) {
  for (auto& p : cloud) {
    p.x = static_cast<float>(p.x);
    p.y = static_cast<float>(p.y);
    p.z = static_cast<float>(p.z);
    p.intensity = static_cast<float>(p.intensity);
  }
  return cloud;
}

}  // namespace lidattack
