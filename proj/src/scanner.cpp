#include "lidattack/scanner.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <numbers>

#include <Eigen/Geometry>

#include "lidattack/errors.hpp"

namespace lidattack {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kParallelEps = 1e-12;
constexpr double kMinRange = 1e-9;

// Distance from the XY origin to a triangle projected onto the XY plane.
double planar_distance_to_origin(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  auto cross = [](const Eigen::Vector2d& u, const Eigen::Vector2d& v) { return u.x() * v.y() - u.y() * v.x(); };
  const double d1 = cross(b - a, -a);
  const double d2 = cross(c - b, -b);
  const double d3 = cross(a - c, -c);
  const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
  if (!(has_neg && has_pos)) return 0.0;  // origin inside or on the boundary
  auto seg = [](const Eigen::Vector2d& p, const Eigen::Vector2d& q) {
    const Eigen::Vector2d d = q - p;
    const double len2 = d.squaredNorm();
    double s = len2 > 0 ? -p.dot(d) / len2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    return (p + s * d).norm();
  };
  return std::min({seg(a, b), seg(b, c), seg(c, a)});
}

struct FaceBounds {
  bool global = false;
  double tan_lo = -std::numeric_limits<double>::infinity();
  double tan_hi = std::numeric_limits<double>::infinity();
  double az_start_deg = 0.0;  // arc start in [-180, 180)
  double az_width_deg = 360.0;
};

FaceBounds face_bounds(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  FaceBounds fb;
  const Eigen::Vector2d pa = a.head<2>(), pb = b.head<2>(), pc = c.head<2>();
  const double rho_min = planar_distance_to_origin(pa, pb, pc);
  if (rho_min < 1e-12) {
    fb.global = true;
    return fb;
  }
  const double rho_max = std::max({pa.norm(), pb.norm(), pc.norm()});
  const double zmin = std::min({a.z(), b.z(), c.z()});
  const double zmax = std::max({a.z(), b.z(), c.z()});
  fb.tan_hi = zmax >= 0 ? zmax / rho_min : zmax / rho_max;
  fb.tan_lo = zmin >= 0 ? zmin / rho_max : zmin / rho_min;
  const double pad = 1e-9 * (1.0 + std::abs(fb.tan_hi) + std::abs(fb.tan_lo));
  fb.tan_hi += pad;
  fb.tan_lo -= pad;

  std::array<double, 3> az = {std::atan2(pa.y(), pa.x()) / kDeg, std::atan2(pb.y(), pb.x()) / kDeg,
                              std::atan2(pc.y(), pc.x()) / kDeg};
  std::sort(az.begin(), az.end());
  // The arc is the complement of the widest angular gap between vertices.
  const std::array<double, 3> gaps = {az[1] - az[0], az[2] - az[1], az[0] + 360.0 - az[2]};
  const auto widest = static_cast<std::size_t>(std::max_element(gaps.begin(), gaps.end()) - gaps.begin());
  fb.az_start_deg = az[(widest + 1) % 3];
  fb.az_width_deg = 360.0 - gaps[widest];
  if (fb.az_width_deg >= 180.0) {
    fb.global = true;
    return fb;
  }
  fb.az_start_deg -= 1e-7;
  fb.az_width_deg += 2e-7;
  return fb;
}

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_f32_le(std::vector<unsigned char>& out, double v) {
  put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

}  // namespace

TriangleMesh::TriangleMesh(std::vector<Eigen::Vector3d> vertices, std::vector<Face> faces)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  for (const auto& v : vertices_) {
    if (!v.allFinite()) throw ArgumentError("mesh: non-finite vertex");
  }
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    for (auto idx : faces_[f]) {
      if (idx >= vertices_.size()) throw ArgumentError("mesh: face " + std::to_string(f) + " index out of range");
    }
    const Eigen::Vector3d e1 = corner(f, 1) - corner(f, 0);
    const Eigen::Vector3d e2 = corner(f, 2) - corner(f, 0);
    const double scale = std::max({e1.squaredNorm(), e2.squaredNorm(), (e2 - e1).squaredNorm()});
    if (!(e1.cross(e2).norm() > 1e-12 * scale) || scale == 0.0) {
      throw ArgumentError("mesh: face " + std::to_string(f) + " is degenerate");
    }
  }
}

Eigen::Vector3d TriangleMesh::normal(std::size_t face) const {
  return (corner(face, 1) - corner(face, 0)).cross(corner(face, 2) - corner(face, 0)).normalized();
}

TriangleMesh TriangleMesh::merge(const std::vector<TriangleMesh>& parts) {
  TriangleMesh out;
  for (const auto& part : parts) {
    const auto offset = static_cast<std::uint32_t>(out.vertices_.size());
    out.vertices_.insert(out.vertices_.end(), part.vertices_.begin(), part.vertices_.end());
    for (const auto& f : part.faces_) out.faces_.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
  }
  return out;
}

TriangleMesh make_icosphere(const Eigen::Vector3d& center, double radius) {
  if (!center.allFinite()) throw ArgumentError("icosphere: non-finite center");
  if (!(radius > 0.0)) throw ArgumentError("icosphere: radius must be positive");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> unit = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
  };
  for (auto& v : unit) v.normalize();
  const std::vector<TriangleMesh::Face> base = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1},
  };
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoints;
  auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
    const auto key = std::minmax(a, b);
    if (auto it = midpoints.find(key); it != midpoints.end()) return it->second;
    unit.push_back((unit[a] + unit[b]).normalized());
    const auto idx = static_cast<std::uint32_t>(unit.size() - 1);
    midpoints.emplace(key, idx);
    return idx;
  };
  std::vector<TriangleMesh::Face> faces;
  faces.reserve(80);
  for (const auto& f : base) {
    const auto a = midpoint(f[0], f[1]);
    const auto b = midpoint(f[1], f[2]);
    const auto c = midpoint(f[2], f[0]);
    faces.push_back({f[0], a, c});
    faces.push_back({f[1], b, a});
    faces.push_back({f[2], c, b});
    faces.push_back({a, b, c});
  }
  std::vector<Eigen::Vector3d> vertices;
  vertices.reserve(unit.size());
  for (const auto& u : unit) vertices.push_back(center + radius * u);
  return TriangleMesh(std::move(vertices), std::move(faces));
}

TriangleMesh build_perturbation_mesh(const PointCloud& points, double radius) {
  if (points.empty()) throw ArgumentError("build_perturbation_mesh: no points");
  if (!(radius > 0.0)) throw ArgumentError("build_perturbation_mesh: radius must be positive");
  std::vector<TriangleMesh> spheres;
  spheres.reserve(points.size());
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw ArgumentError("build_perturbation_mesh: non-finite point");
    }
    spheres.push_back(make_icosphere(p.xyz(), radius));
  }
  return TriangleMesh::merge(spheres);
}

TriangleMesh translate_mesh(const TriangleMesh& mesh, const Eigen::Vector3d& delta) {
  std::vector<Eigen::Vector3d> v = mesh.vertices();
  for (auto& p : v) p += delta;
  return TriangleMesh(std::move(v), mesh.faces());
}

TriangleMesh rotate_mesh_z_about(const TriangleMesh& mesh, const Eigen::Vector3d& pivot, double psi) {
  if (psi == 0.0) return mesh;
  const Eigen::Matrix3d r = rotation_z(psi);
  std::vector<Eigen::Vector3d> v = mesh.vertices();
  for (auto& p : v) p = pivot + r * (p - pivot);
  return TriangleMesh(std::move(v), mesh.faces());
}

std::optional<RayHit> ray_triangle_intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                             const Eigen::Vector3d& v0, const Eigen::Vector3d& v1,
                                             const Eigen::Vector3d& v2) {
  const Eigen::Vector3d e1 = v1 - v0;
  const Eigen::Vector3d e2 = v2 - v0;
  const Eigen::Vector3d pvec = dir.cross(e2);
  const double det = e1.dot(pvec);  // == -dir . (e1 x e2)
  const double n_norm = e1.cross(e2).norm();
  if (n_norm == 0.0 || std::abs(det) < kParallelEps * n_norm) return std::nullopt;
  const double inv = 1.0 / det;
  const Eigen::Vector3d tvec = origin - v0;
  const double u = tvec.dot(pvec) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Eigen::Vector3d qvec = tvec.cross(e1);
  const double v = dir.dot(qvec) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(qvec) * inv;
  if (!(t > kMinRange)) return std::nullopt;
  return RayHit{t, origin + t * dir};
}

ScanConfig ScanConfig::spinning_64() {
  ScanConfig c;
  c.vertical_angles_deg.resize(64);
  for (int i = 0; i < 64; ++i) c.vertical_angles_deg[i] = -24.8 + (2.0 - -24.8) * i / 63.0;
  return c;
}

void ScanConfig::validate() const {
  if (!origin.allFinite()) throw ConfigError("scan config: non-finite origin");
  if (!(horizontal_resolution_deg > 0.0) || !std::isfinite(horizontal_resolution_deg)) {
    throw ConfigError("scan config: horizontal resolution must be positive");
  }
  if (vertical_angles_deg.empty()) throw ConfigError("scan config: no vertical angles");
  for (double a : vertical_angles_deg) {
    if (!(a > -90.0 && a < 90.0)) throw ConfigError("scan config: vertical angle outside (-90, 90)");
  }
  if (!std::isfinite(span_start_deg) || !std::isfinite(span_end_deg)) {
    throw ConfigError("scan config: non-finite horizontal span");
  }
}

std::size_t ScanConfig::column_count() const {
  if (!(span_end_deg > span_start_deg)) return 0;
  return static_cast<std::size_t>(std::ceil((span_end_deg - span_start_deg) / horizontal_resolution_deg - 1e-9));
}

double ScanConfig::column_angle_deg(std::size_t i) const {
  return span_start_deg + static_cast<double>(i) * horizontal_resolution_deg;
}

void to_json(nlohmann::json& j, const ScanConfig& c) {
  j = nlohmann::json{{"origin", {c.origin.x(), c.origin.y(), c.origin.z()}},
                     {"vertical_angles", c.vertical_angles_deg},
                     {"horizontal_resolution_deg", c.horizontal_resolution_deg},
                     {"horizontal_span_deg", {c.span_start_deg, c.span_end_deg}}};
}

void from_json(const nlohmann::json& j, ScanConfig& c) {
  c = ScanConfig::spinning_64();
  if (j.contains("origin")) {
    const auto& o = j.at("origin");
    if (!o.is_array() || o.size() != 3) throw ConfigError("scan config: origin must be [x,y,z]");
    c.origin = {o[0].get<double>(), o[1].get<double>(), o[2].get<double>()};
  }
  if (j.contains("vertical_angles")) c.vertical_angles_deg = j.at("vertical_angles").get<std::vector<double>>();
  if (j.contains("horizontal_resolution_deg")) c.horizontal_resolution_deg = j.at("horizontal_resolution_deg").get<double>();
  if (j.contains("horizontal_span_deg")) {
    const auto& s = j.at("horizontal_span_deg");
    if (!s.is_array() || s.size() != 2) throw ConfigError("scan config: horizontal_span_deg must be [start,end]");
    c.span_start_deg = s[0].get<double>();
    c.span_end_deg = s[1].get<double>();
  }
  c.validate();
}

Eigen::Vector3d beam_direction(double h_deg, double a_deg) {
  const double h = h_deg * kDeg;
  const double a = a_deg * kDeg;
  return {std::cos(a) * std::cos(h), std::cos(a) * std::sin(h), std::sin(a)};
}

std::vector<ScanReturn> simulate_scan_returns(const TriangleMesh& mesh, const ScanConfig& config) {
  config.validate();
  const std::size_t ncol = config.column_count();
  const std::size_t nbeam = config.vertical_angles_deg.size();
  std::vector<ScanReturn> out;
  if (ncol == 0 || mesh.empty()) return out;

  const auto& faces = mesh.faces();
  const std::size_t nface = faces.size();
  std::vector<FaceBounds> bounds(nface);
  std::vector<std::uint32_t> global;
  // (column, face) pairs, bucketed below.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> entries;
  const double res = config.horizontal_resolution_deg;
  for (std::size_t f = 0; f < nface; ++f) {
    bounds[f] = face_bounds(mesh.corner(f, 0) - config.origin, mesh.corner(f, 1) - config.origin,
                            mesh.corner(f, 2) - config.origin);
    if (bounds[f].global) {
      global.push_back(static_cast<std::uint32_t>(f));
      continue;
    }
    const double a0 = bounds[f].az_start_deg;
    const double w = bounds[f].az_width_deg;
    const auto k_lo = static_cast<long>(std::floor((config.span_start_deg - a0 - w) / 360.0));
    const auto k_hi = static_cast<long>(std::ceil((config.span_end_deg - a0) / 360.0));
    for (long k = k_lo; k <= k_hi; ++k) {
      const double lo = a0 + 360.0 * static_cast<double>(k);
      const double i_lo = std::ceil((lo - config.span_start_deg) / res);
      const double i_hi = std::floor((lo + w - config.span_start_deg) / res);
      const double first = std::max(i_lo, 0.0);
      const double last = std::min(i_hi, static_cast<double>(ncol) - 1.0);
      for (double i = first; i <= last; i += 1.0) {
        entries.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(f));
      }
    }
  }
  std::vector<std::uint32_t> offsets(ncol + 1, 0);
  for (const auto& e : entries) ++offsets[e.first + 1];
  for (std::size_t i = 0; i < ncol; ++i) offsets[i + 1] += offsets[i];
  std::vector<std::uint32_t> bucket(entries.size());
  {
    std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
    for (const auto& e : entries) bucket[cursor[e.first]++] = e.second;
  }

  std::vector<double> tan_a(nbeam), cos_a(nbeam), sin_a(nbeam);
  for (std::size_t b = 0; b < nbeam; ++b) {
    const double a = config.vertical_angles_deg[b] * kDeg;
    tan_a[b] = std::tan(a);
    cos_a[b] = std::cos(a);
    sin_a[b] = std::sin(a);
  }

  std::vector<std::uint32_t> candidates;
  for (std::size_t col = 0; col < ncol; ++col) {
    candidates.assign(bucket.begin() + offsets[col], bucket.begin() + offsets[col + 1]);
    candidates.insert(candidates.end(), global.begin(), global.end());
    if (candidates.empty()) continue;
    double col_lo = std::numeric_limits<double>::infinity();
    double col_hi = -std::numeric_limits<double>::infinity();
    for (auto f : candidates) {
      col_lo = std::min(col_lo, bounds[f].tan_lo);
      col_hi = std::max(col_hi, bounds[f].tan_hi);
    }
    const double h = config.column_angle_deg(col) * kDeg;
    const double ch = std::cos(h);
    const double sh = std::sin(h);
    for (std::size_t b = 0; b < nbeam; ++b) {
      if (tan_a[b] < col_lo || tan_a[b] > col_hi) continue;
      const Eigen::Vector3d dir(cos_a[b] * ch, cos_a[b] * sh, sin_a[b]);
      std::optional<ScanReturn> best;
      for (auto f : candidates) {
        if (tan_a[b] < bounds[f].tan_lo || tan_a[b] > bounds[f].tan_hi) continue;
        const auto hit = ray_triangle_intersect(config.origin, dir, mesh.corner(f, 0), mesh.corner(f, 1),
                                                mesh.corner(f, 2));
        if (!hit) continue;
        if (!best || hit->t < best->range || (hit->t == best->range && f < best->face)) {
          best = ScanReturn{hit->point, f, static_cast<std::uint32_t>(col), static_cast<std::uint32_t>(b), hit->t};
        }
      }
      if (best) out.push_back(*best);
    }
  }
  return out;
}

PointCloud simulate_scan(const TriangleMesh& mesh, const ScanConfig& config) {
  const auto returns = simulate_scan_returns(mesh, config);
  PointCloud cloud;
  cloud.reserve(returns.size());
  for (const auto& r : returns) cloud.push_back(make_point(r.point, 1.0));
  return cloud;
}

void export_stl(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  bytes.reserve(84 + 50 * mesh.faces().size());
  std::string header = "lidattack perturbation mesh";
  header.resize(80, '\0');
  bytes.insert(bytes.end(), header.begin(), header.end());
  put_u32_le(bytes, static_cast<std::uint32_t>(mesh.faces().size()));
  for (std::size_t f = 0; f < mesh.faces().size(); ++f) {
    const Eigen::Vector3d n = mesh.normal(f);
    for (int k = 0; k < 3; ++k) put_f32_le(bytes, n[k]);
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 3; ++k) put_f32_le(bytes, mesh.corner(f, c)[k]);
    }
    bytes.push_back(0);
    bytes.push_back(0);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure: " + path.string());
}

TriangleMesh import_stl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mesh file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 84) throw MalformedFileError(path.string() + ": too short for binary STL");
  const std::uint32_t count = read_u32_le(bytes.data() + 80);
  if (bytes.size() != 84 + 50ull * count) {
    throw MalformedFileError(path.string() + ": size does not match facet count " + std::to_string(count));
  }
  std::vector<Eigen::Vector3d> vertices;
  std::vector<TriangleMesh::Face> faces;
  vertices.reserve(3ull * count);
  faces.reserve(count);
  for (std::uint32_t f = 0; f < count; ++f) {
    const unsigned char* rec = bytes.data() + 84 + 50ull * f + 12;
    for (int c = 0; c < 3; ++c) {
      Eigen::Vector3d v;
      for (int k = 0; k < 3; ++k) v[k] = std::bit_cast<float>(read_u32_le(rec + 12 * c + 4 * k));
      vertices.push_back(v);
    }
    faces.push_back({3 * f, 3 * f + 1, 3 * f + 2});
  }
  try {
    return TriangleMesh(std::move(vertices), std::move(faces));
  } catch (const ArgumentError& e) {
    throw MalformedFileError(path.string() + ": " + e.what());
  }
}

}  // namespace lidattack
