#include <doctest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "lidattack/errors.hpp"
#include "lidattack/pointcloud.hpp"
#include "lidattack/scene.hpp"
#include "support.hpp"

using namespace lidattack;
using testsupport::TempDir;

namespace {

PointCloud as_float(PointCloud c) { return round_to_float(std::move(c)); }

double brute_chamfer(const PointCloud& a, const PointCloud& b) {
  double sum = 0.0;
  for (const auto& p : a) {
    double best = INFINITY;
    for (const auto& q : b) {
      const double dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
      best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    sum += best;
  }
  return sum / static_cast<double>(a.size());
}

double brute_pairwise(const PointCloud& a) {
  if (a.size() < 2) return 0.0;
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double dx = a[i].x - a[j].x, dy = a[i].y - a[j].y, dz = a[i].z - a[j].z;
      sum += std::sqrt(dx * dx + dy * dy + dz * dz);
      ++pairs;
    }
  }
  return sum / pairs;
}

}  // namespace

TEST_SUITE("pointcloud") {

TEST_CASE("kitti reader decodes hand-assembled little-endian bytes") {
  TempDir dir("kitti");
  // 1.0f = 0x3F800000, 2.0f = 0x40000000, 3.0f = 0x40400000, 0.5f = 0x3F000000
  testsupport::write_bytes(dir / "one.bin", {0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40,
                                             0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x00, 0x3F});
  const auto cloud = load_kitti_bin(dir / "one.bin");
  REQUIRE(cloud.size() == 1);
  CHECK(cloud[0].x == 1.0);
  CHECK(cloud[0].y == 2.0);
  CHECK(cloud[0].z == 3.0);
  CHECK(cloud[0].intensity == 0.5);
}

TEST_CASE("kitti record counts follow the byte length") {
  TempDir dir("kitti");
  testsupport::write_bytes(dir / "empty.bin", {});
  CHECK(load_kitti_bin(dir / "empty.bin").empty());
  testsupport::write_bytes(dir / "two.bin", std::vector<unsigned char>(32, 0));
  CHECK(load_kitti_bin(dir / "two.bin").size() == 2);
  testsupport::write_bytes(dir / "bad.bin", std::vector<unsigned char>(17, 0));
  CHECK_THROWS_AS(load_kitti_bin(dir / "bad.bin"), MalformedFileError);
  CHECK_THROWS_AS(load_kitti_bin(dir / "missing.bin"), IoError);
}

TEST_CASE("non-finite record is reported with its index") {
  TempDir dir("kitti");
  std::vector<unsigned char> bytes(48, 0);
  // record 2, y = +inf (0x7F800000)
  bytes[32 + 4 + 2] = 0x80;
  bytes[32 + 4 + 3] = 0x7F;
  testsupport::write_bytes(dir / "inf.bin", bytes);
  try {
    load_kitti_bin(dir / "inf.bin");
    FAIL("expected MalformedRecordError");
  } catch (const MalformedRecordError& e) {
    CHECK(e.record() == 2);
  }
}

TEST_CASE("kitti writer produces 16 bytes per point and roundtrips bit-exactly") {
  TempDir dir("kitti");
  std::mt19937_64 rng(3);
  const auto cloud = as_float(testsupport::random_cloud(1000, rng));
  save_kitti_bin(cloud, dir / "c.bin");
  CHECK(std::filesystem::file_size(dir / "c.bin") == 16000);
  CHECK(load_kitti_bin(dir / "c.bin") == cloud);

  save_kitti_bin({}, dir / "e.bin");
  CHECK(std::filesystem::file_size(dir / "e.bin") == 0);

  const PointCloud tricky = {{-0.0, 1e-38, -3.4e38, 0.0}, {1.17549435e-38, 6.1e-5, 123456.789, 1.0}};
  save_kitti_bin(as_float(tricky), dir / "t.bin");
  const auto back = load_kitti_bin(dir / "t.bin");
  REQUIRE(back.size() == 2);
  CHECK(std::signbit(back[0].x));
  CHECK(back == as_float(tricky));
}

TEST_CASE("rotation about z") {
  const PointCloud p = {{1, 0, 0, 0.25}};
  const auto r = rotate_z(p, std::numbers::pi / 2);
  CHECK(std::abs(r[0].x) < 1e-9);
  CHECK(std::abs(r[0].y - 1.0) < 1e-9);
  CHECK(r[0].z == 0.0);
  CHECK(r[0].intensity == 0.25);

  std::mt19937_64 rng(5);
  const auto c = testsupport::random_cloud(50, rng);
  CHECK(rotate_z(c, 0.0) == c);
  const auto back = rotate_z(rotate_z(c, 0.7), -0.7);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK((back[i].xyz() - c[i].xyz()).norm() < 1e-9);
}

TEST_CASE("rotation matrix is orthonormal and preserves distances") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ang(-10, 10);
  for (int k = 0; k < 100; ++k) {
    const double psi = ang(rng);
    const Eigen::Matrix3d r = rotation_z(psi);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-12);
    CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    // independent construction of the matrix
    CHECK(std::abs(r(0, 0) - std::cos(psi)) < 1e-15);
    CHECK(std::abs(r(0, 1) + std::sin(psi)) < 1e-15);
    CHECK(std::abs(r(1, 0) - std::sin(psi)) < 1e-15);
    CHECK(r(2, 2) == 1.0);
  }
  const auto c = testsupport::random_cloud(20, rng);
  const auto rc = rotate_z(c, 1.234);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) {
      CHECK(std::abs((c[i].xyz() - c[j].xyz()).norm() - (rc[i].xyz() - rc[j].xyz()).norm()) < 1e-9);
    }
  }
}

TEST_CASE("rotation about a pivot keeps the pivot fixed and zero angle is exact") {
  const Eigen::Vector3d pivot(3, 4, 5);
  const PointCloud c = {{3, 4, 9, 0}, {4, 4, 5, 0}};
  const auto r = rotate_z_about(c, pivot, std::numbers::pi / 2);
  CHECK((r[0].xyz() - Eigen::Vector3d(3, 4, 9)).norm() < 1e-12);
  CHECK((r[1].xyz() - Eigen::Vector3d(3, 5, 5)).norm() < 1e-12);
  CHECK(rotate_z_about(c, pivot, 0.0) == c);
}

TEST_CASE("translation") {
  const PointCloud p = {{1, 2, 3, 0.5}};
  CHECK(translate(p, {0, 0, 0}) == p);
  const auto t = translate(p, {1, 1, 1});
  CHECK(t[0] == Point3{2, 3, 4, 0.5});
  std::mt19937_64 rng(2);
  const auto c = testsupport::random_cloud(30, rng);
  const Eigen::Vector3d d(0.3, -1.7, 2.25);
  const auto back = translate(translate(c, d), -d);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK((back[i].xyz() - c[i].xyz()).norm() < 1e-12);
}

TEST_CASE("chamfer distance from perturbation to target") {
  std::mt19937_64 rng(11);
  const auto target = testsupport::random_cloud(50, rng);
  const PointCloud subset(target.begin(), target.begin() + 5);
  CHECK(chamfer_to_target(subset, target) == 0.0);

  const PointCloud one = {{target[7].x + 0.1, target[7].y, target[7].z, 0}};
  const PointCloud single_target = {target[7]};
  CHECK(chamfer_to_target(one, single_target) == doctest::Approx(0.1).epsilon(1e-12));

  for (int trial = 0; trial < 20; ++trial) {
    const auto pert = testsupport::random_cloud(5, rng);
    CHECK(chamfer_to_target(pert, target) == doctest::Approx(brute_chamfer(pert, target)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(chamfer_to_target({}, target), ArgumentError);
  CHECK_THROWS_AS(chamfer_to_target(subset, {}), ArgumentError);
}

TEST_CASE("chamfer is zero exactly when every point coincides with a target point") {
  std::mt19937_64 rng(12);
  const auto target = testsupport::random_cloud(20, rng);
  PointCloud p = {target[3], target[9]};
  CHECK(chamfer_to_target(p, target) == 0.0);
  p[1].z += 1e-6;
  CHECK(chamfer_to_target(p, target) > 0.0);
}

TEST_CASE("mean pairwise distance") {
  CHECK(mean_pairwise_distance({{1, 2, 3, 0}}) == 0.0);
  CHECK(mean_pairwise_distance({{0, 0, 0, 0}, {0.3, 0, 0, 0}}) == doctest::Approx(0.3).epsilon(1e-12));
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = testsupport::random_cloud(10, rng);
    CHECK(mean_pairwise_distance(c) == doctest::Approx(brute_pairwise(c)).epsilon(1e-12));
    const auto moved = translate(rotate_z(c, 0.9), {4, -2, 1});
    CHECK(mean_pairwise_distance(moved) == doctest::Approx(mean_pairwise_distance(c)).epsilon(1e-9));
  }
  CHECK_THROWS_AS(mean_pairwise_distance({}), ArgumentError);
}

TEST_CASE("bounding box containment respects yaw") {
  BoundingBox b;
  b.center = {10, 0, 0};
  b.half_extents = {2, 0.5, 1};
  b.yaw = std::numbers::pi / 2;
  CHECK(b.contains({10, 1.9, 0}));
  CHECK_FALSE(b.contains({11.9, 0, 0}));
  CHECK(b.volume() == doctest::Approx(8.0));
}

TEST_CASE("wrap_angle maps into [-pi, pi)") {
  CHECK(wrap_angle(std::numbers::pi) == doctest::Approx(-std::numbers::pi));
  CHECK(wrap_angle(3 * std::numbers::pi / 2) == doctest::Approx(-std::numbers::pi / 2));
  CHECK(wrap_angle(0.25) == doctest::Approx(0.25));
}

TEST_CASE("scene files roundtrip and resolve paths relative to the file") {
  TempDir dir("scene");
  Scene s;
  s.background = {{10, 10, 0, 1}, {11, 10, 0, 1}};
  s.target = {{5, 0, -1, 1}, {5, 0.5, -1, 1}, {5, 0.5, -0.5, 1}};
  s.label = "Pedestrian";
  s.gt_box.center = {5, 0.25, -0.8};
  s.gt_box.half_extents = {0.3, 0.4, 0.9};
  s.gt_box.yaw = 0.1;
  std::filesystem::create_directories(dir / "sub");
  save_scene(s, dir / "sub/s.json");
  const auto back = load_scene(dir / "sub/s.json");
  CHECK(back.background == s.background);
  CHECK(back.target == s.target);
  CHECK(back.label == "Pedestrian");
  CHECK((back.gt_box.center - s.gt_box.center).norm() < 1e-12);
  CHECK(back.gt_box.yaw == doctest::Approx(0.1));
  const auto merged = back.merged();
  CHECK(merged.size() == 5);
  CHECK(merged.back() == s.target.back());
}

TEST_CASE("scene validation") {
  TempDir dir("scene");
  auto write = [&](const std::string& text) {
    std::ofstream(dir / "s.json") << text;
    return dir / "s.json";
  };
  save_kitti_bin({{1, 1, 1, 1}}, dir / "t.bin");
  const std::string box = R"("gt_box":{"center":[1,1,1],"half_extents":[1,1,1],"yaw":0})";
  CHECK_THROWS_AS(load_scene(write("{not json")), ConfigError);
  CHECK_THROWS_AS(load_scene(write(R"({"background":"t.bin","target":"t.bin","label":"Truck",)" + box + "}")),
                  ConfigError);
  CHECK_THROWS_AS(load_scene(write(R"({"background":"none.bin","target":"t.bin","label":"Car",)" + box + "}")), IoError);
  CHECK_NOTHROW(load_scene(write(R"({"background":"t.bin","target":"t.bin","label":"Car",)" + box + "}")));
  CHECK_THROWS_AS(load_scene(write(R"({"background":"t.bin","target":"t.bin","label":"Car","gt_box":{"center":[1,1,1],"half_extents":[1,0,1],"yaw":0}})")),
                  ConfigError);
}

}
