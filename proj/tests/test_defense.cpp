#include <doctest.h>

#include <algorithm>
#include <set>

#include "lidattack/defense.hpp"
#include "lidattack/errors.hpp"
#include "lidattack/synthetic.hpp"
#include "lidattack/toy_detector.hpp"
#include "support.hpp"

using namespace lidattack;
using testsupport::TempDir;

namespace {

PointCloud indexed_cloud(std::size_t n) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.push_back({static_cast<double>(i), 0, 0, 0});
  return c;
}

SrsConfig remove_count(std::size_t k, std::uint64_t seed = 1) {
  SrsConfig c;
  c.remove_count = k;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_SUITE("defense") {

TEST_CASE("srs examples") {
  const auto cloud = indexed_cloud(50);
  CHECK(srs_filter(cloud, remove_count(0)) == cloud);
  const auto one = srs_filter(cloud, remove_count(49));
  CHECK(one.size() == 1);

  SrsConfig frac;
  frac.remove_fraction = 0.017;
  CHECK(frac.resolve(117000) == 1989);
  CHECK(117000 - frac.resolve(117000) == 115011);
  CHECK(srs_filter(indexed_cloud(117000), frac).size() == 115011);

  frac.remove_fraction = 0.0;
  CHECK(srs_filter(cloud, frac) == cloud);
}

TEST_CASE("srs errors") {
  const auto cloud = indexed_cloud(10);
  CHECK_THROWS_AS(srs_filter(cloud, remove_count(10)), ArgumentError);
  CHECK_THROWS_AS(srs_filter(cloud, remove_count(11)), ArgumentError);
  SrsConfig none;
  CHECK_THROWS_AS(srs_filter(cloud, none), ArgumentError);
  SrsConfig both = remove_count(1);
  both.remove_fraction = 0.1;
  CHECK_THROWS_AS(srs_filter(cloud, both), ArgumentError);
  SrsConfig bad;
  bad.remove_fraction = 1.0;
  CHECK_THROWS_AS(srs_filter(cloud, bad), ArgumentError);
  bad.remove_fraction = -0.1;
  CHECK_THROWS_AS(srs_filter(cloud, bad), ArgumentError);
  CHECK(srs_filter({}, remove_count(0)).empty());
}

TEST_CASE("srs output is an order-preserving subset of exact size") {
  std::mt19937_64 gen(4);
  const auto cloud = testsupport::random_cloud(500, gen);
  for (std::size_t k : {1u, 7u, 250u, 499u}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto keep = srs_keep_indices(cloud.size(), k, seed);
      CHECK(keep.size() == cloud.size() - k);
      CHECK(std::is_sorted(keep.begin(), keep.end()));
      CHECK(std::adjacent_find(keep.begin(), keep.end()) == keep.end());
      const auto out = srs_filter(cloud, remove_count(k, seed));
      REQUIRE(out.size() == keep.size());
      for (std::size_t i = 0; i < keep.size(); ++i) CHECK(out[i] == cloud[keep[i]]);
    }
  }
  CHECK(srs_filter(cloud, remove_count(100, 3)) == srs_filter(cloud, remove_count(100, 3)));
  CHECK(srs_filter(cloud, remove_count(100, 3)) != srs_filter(cloud, remove_count(100, 4)));
}

TEST_CASE("srs survival frequency is uniform") {
  constexpr std::size_t n = 40, k = 13;
  constexpr int kRuns = 10000;
  std::vector<int> survived(n, 0);
  for (int r = 0; r < kRuns; ++r) {
    for (auto i : srs_keep_indices(n, k, 1000 + static_cast<std::uint64_t>(r))) ++survived[i];
  }
  const double expect = static_cast<double>(n - k) / n;
  for (std::size_t i = 0; i < n; ++i) {
    CAPTURE(i);
    CHECK(std::abs(survived[i] / static_cast<double>(kRuns) - expect) < 0.01);
  }
}

TEST_CASE("adversarial training set emission") {
  const auto scenes = synthetic::make_benchmark(20, 99);
  std::vector<AttackResult> results(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    results[i].best.scanned = {{1.0 + static_cast<double>(i), 2, 3, 1}, {4, 5, 6, 1}};
    results[i].best.evaluated = true;
  }
  TempDir dir("emit");

  SUBCASE("mix 0 writes originals only") {
    const auto m = emit_adv_training_set(scenes, results, 0.0, dir.path(), 7);
    CHECK(m.entries.size() == 20);
    for (const auto& e : m.entries) CHECK(e.kind == "clean");
  }
  SUBCASE("mix 1 writes every adversarial variant") {
    const auto m = emit_adv_training_set(scenes, results, 1.0, dir.path(), 7);
    CHECK(m.entries.size() == 40);
  }
  SUBCASE("partial mix rounds up and is seeded") {
    const auto m = emit_adv_training_set(scenes, results, 0.26, dir.path(), 7);
    const auto adv = std::count_if(m.entries.begin(), m.entries.end(), [](auto& e) { return e.kind == "adversarial"; });
    CHECK(adv == 6);
    TempDir other("emit2");
    const auto again = emit_adv_training_set(scenes, results, 0.26, other.path(), 7);
    CHECK(nlohmann::json(again) == nlohmann::json(m));
    CHECK(emit_adv_training_set(scenes, results, 0.25, other.path(), 7).entries.size() == 25);
  }
  SUBCASE("files match the manifest and adversarial clouds contain the originals") {
    emit_adv_training_set(scenes, results, 0.5, dir.path(), 3);
    const auto m = load_manifest(dir / "manifest.json");
    std::size_t adv = 0;
    for (const auto& e : m.entries) {
      const auto cloud = load_kitti_bin(dir.path() / e.file);
      CHECK(cloud.size() == e.points);
      const auto idx = std::stoul(e.file.substr(e.file.find('_') + 1));
      CHECK(e.label == scenes[idx].label);
      if (e.kind != "adversarial") continue;
      ++adv;
      const auto clean = load_kitti_bin(dir.path() / ("clean_" + std::to_string(idx) + ".bin"));
      const auto as_tuple = [](const Point3& p) { return std::tuple(p.x, p.y, p.z, p.intensity); };
      std::multiset<std::tuple<double, double, double, double>> have;
      for (const auto& p : cloud) have.insert(as_tuple(p));
      for (const auto& p : clean) {
        auto it = have.find(as_tuple(p));
        REQUIRE(it != have.end());
        have.erase(it);
      }
      for (const auto& p : results[idx].best.scanned) {
        auto it = have.find(as_tuple(p));
        REQUIRE(it != have.end());
        have.erase(it);
      }
      CHECK(have.empty());
    }
    CHECK(adv == 10);
  }
  CHECK_THROWS_AS(emit_adv_training_set(scenes, {}, 0.5, dir.path(), 1), ArgumentError);
  CHECK_THROWS_AS(emit_adv_training_set(scenes, results, 1.5, dir.path(), 1), ArgumentError);
}

TEST_CASE("manifest validation") {
  TempDir dir("manifest");
  std::ofstream(dir / "bad.json") << R"({"entries":[{"file":"a.bin","label":"Car","kind":"weird","points":1}]})";
  CHECK_THROWS_AS(load_manifest(dir / "bad.json"), ConfigError);
  std::ofstream(dir / "trunc.json") << R"({"entries":[)";
  CHECK_THROWS_AS(load_manifest(dir / "trunc.json"), ConfigError);
  CHECK_THROWS_AS(load_manifest(dir / "missing.json"), IoError);
}

}
