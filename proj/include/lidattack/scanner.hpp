#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "lidattack/pointcloud.hpp"

namespace lidattack {

// Immutable triangle soup. Construction rejects out-of-range indices and
// zero-area faces.
class TriangleMesh {
 public:
  using Face = std::array<std::uint32_t, 3>;

  TriangleMesh() = default;
  TriangleMesh(std::vector<Eigen::Vector3d> vertices, std::vector<Face> faces);

  const std::vector<Eigen::Vector3d>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  bool empty() const { return faces_.empty(); }

  const Eigen::Vector3d& corner(std::size_t face, int k) const { return vertices_[faces_[face][k]]; }
  // Unit normal from the winding order.
  Eigen::Vector3d normal(std::size_t face) const;

  // Disjoint union, vertex order preserved.
  static TriangleMesh merge(const std::vector<TriangleMesh>& parts);

 private:
  std::vector<Eigen::Vector3d> vertices_;
  std::vector<Face> faces_;
};

// Level-1 subdivided icosahedron: 42 vertices, 80 faces.
TriangleMesh make_icosphere(const Eigen::Vector3d& center, double radius);

// One icosphere per perturbation point, in input order.
TriangleMesh build_perturbation_mesh(const PointCloud& points, double radius);

TriangleMesh translate_mesh(const TriangleMesh& mesh, const Eigen::Vector3d& delta);
// psi == 0 returns the input unchanged.
TriangleMesh rotate_mesh_z_about(const TriangleMesh& mesh, const Eigen::Vector3d& pivot, double psi);

struct RayHit {
  double t = 0.0;  // distance along the unit direction
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

// Möller–Trumbore with inclusive edges. Rejects near-parallel rays and hits
// with t <= 1e-9.
std::optional<RayHit> ray_triangle_intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                             const Eigen::Vector3d& v0, const Eigen::Vector3d& v1,
                                             const Eigen::Vector3d& v2);

struct ScanConfig {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  std::vector<double> vertical_angles_deg;
  double horizontal_resolution_deg = 0.2;
  double span_start_deg = 0.0;
  double span_end_deg = 360.0;

  // 64 beams spread over [-24.8, 2] degrees, 0.2 degree columns, full turn.
  static ScanConfig spinning_64();

  void validate() const;
  // Columns are start + i * resolution for start + i * resolution < end.
  std::size_t column_count() const;
  double column_angle_deg(std::size_t i) const;
};

void to_json(nlohmann::json& j, const ScanConfig& c);
void from_json(const nlohmann::json& j, ScanConfig& c);

// Beam direction for horizontal angle h and elevation a, both in degrees.
Eigen::Vector3d beam_direction(double h_deg, double a_deg);

struct ScanReturn {
  Eigen::Vector3d point;
  std::uint32_t face = 0;
  std::uint32_t column = 0;
  std::uint32_t beam = 0;
  double range = 0.0;
};

// Nearest hit per beam, ordered by (column, beam).
std::vector<ScanReturn> simulate_scan_returns(const TriangleMesh& mesh, const ScanConfig& config);
// Same beams as simulate_scan_returns with intensity 1.0.
PointCloud simulate_scan(const TriangleMesh& mesh, const ScanConfig& config);

// Binary STL, little-endian, normals recomputed from winding.
void export_stl(const TriangleMesh& mesh, const std::filesystem::path& path);
// Binary STL reader; each facet contributes three fresh vertices.
TriangleMesh import_stl(const std::filesystem::path& path);

}  // namespace lidattack
