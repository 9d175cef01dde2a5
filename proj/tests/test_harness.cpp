#include <doctest.h>

#include "lidattack/errors.hpp"
#include "lidattack/harness.hpp"
#include "lidattack/synthetic.hpp"
#include "lidattack/toy_detector.hpp"
#include "support.hpp"

using namespace lidattack;

namespace {

AttackResult result_with(VerdictCase c, std::uint64_t calls = 10) {
  AttackResult r;
  r.best.evaluated = true;
  r.best.verdict.kind = c;
  r.oracle_calls = calls;
  return r;
}

struct Fixture {
  std::vector<Scene> scenes = synthetic::make_benchmark(5, 20240917);
  std::unique_ptr<Oracle> oracle = make_builtin_oracle("voxel0.2");
  AttackConfig config;
  std::vector<SweepCase> cases;
  std::vector<OracleVerdict> baseline;

  Fixture() {
    Rng rng(17);
    for (const auto& s : scenes) {
      auto pop = sample_population(s, config, rng);
      Evaluator ev(s, *oracle, config);
      ev.evaluate(pop[0]);
      cases.push_back({&s, pop[0].points});
      baseline.push_back(pop[0].verdict);
    }
  }
};

// Fails every detect call.
class DeadOracle final : public Oracle {
 public:
  const DetectorInfo& info() const override { return info_; }

 protected:
  std::vector<Detection> do_detect(const PointCloud&) override { throw TransportError("gone"); }

 private:
  DetectorInfo info_{"dead", 0.5, {"Car"}};
};

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("asr arithmetic") {
  std::vector<AttackResult> rs(10, result_with(VerdictCase::Hidden));
  CHECK(compute_asr(rs) == 1.0);
  rs[3] = result_with(VerdictCase::RecognizedCorrect);
  CHECK(compute_asr(rs) == 0.9);
  rs.assign(4, result_with(VerdictCase::RecognizedCorrect));
  CHECK(compute_asr(rs) == 0.0);
  rs[0] = result_with(VerdictCase::Misclassified);
  CHECK(compute_asr(rs) == 0.25);
  CHECK_THROWS_AS(compute_asr({}), ArgumentError);
}

TEST_CASE("asr formatting is exact to four decimals") {
  CHECK(format_asr(0, 7) == "0.0000");
  CHECK(format_asr(7, 7) == "1.0000");
  CHECK(format_asr(1, 3) == "0.3333");
  CHECK(format_asr(2, 3) == "0.6667");
  CHECK(format_asr(1, 8) == "0.1250");
  CHECK(format_asr(1, 16) == "0.0625");
  CHECK(format_asr(1, 32) == "0.0313");  // 0.03125 rounds half up
  CHECK(format_asr(17, 20) == "0.8500");
  CHECK(format_asr(0, 0) == "nan");
  for (std::size_t n = 1; n < 60; ++n) {
    for (std::size_t s = 0; s <= n; ++s) {
      const double v = std::stod(format_asr(s, n));
      CHECK(std::abs(v - static_cast<double>(s) / n) <= 0.00005 + 1e-12);
    }
  }
}

TEST_CASE("report rendering") {
  std::vector<AttackResult> rs = {result_with(VerdictCase::Hidden, 10), result_with(VerdictCase::RecognizedCorrect, 30)};
  rs[0].wall_ms = 5;
  rs[1].wall_ms = 15;
  const auto rep = attack_report("baseline", rs, 42);
  const auto csv = rep.to_csv();
  CHECK(csv ==
        "# kind=asr seed=42\n"
        "condition,scenes,successes,asr,mean_calls,mean_ms\n"
        "baseline,2,1,0.5000,20.000000,10.000000\n");
  const auto j = rep.to_json();
  CHECK(j["seed"] == 42);
  CHECK(j["rows"][0]["asr"] == "0.5000");
  CHECK(j["rows"][0]["errors"] == 0);
  const auto plot = rep.plot_data();
  CHECK(plot["kind"] == "asr");
  CHECK(plot["y"][0] == 0.5);

  Report quoted;
  quoted.kind = "asr";
  quoted.rows.push_back({"a,b", 0, 1, 1, 0, 0, 0});
  CHECK(quoted.to_csv().find("\"a,b\",1,1,1.0000") != std::string::npos);
}

TEST_CASE("zero rows reproduce the baseline verdicts") {
  Fixture f;
  const std::vector<double> zero = {0.0};
  const std::vector<std::size_t> none = {0};
  std::size_t expected_successes = 0;
  for (const auto& v : f.baseline) expected_successes += attack_success(v);

  for (std::size_t i = 0; i < f.cases.size(); ++i) {
    const auto v = judge(*f.cases[i].scene, build_perturbation_mesh(f.cases[i].perturbation, f.config.mesh_radius),
                         *f.oracle, f.config);
    CHECK(v.kind == f.baseline[i].kind);
    CHECK(v.score_s == f.baseline[i].score_s);
  }
  const auto d = sweep_distance(f.cases, *f.oracle, f.config, zero);
  const auto a = sweep_angle(f.cases, *f.oracle, f.config, zero);
  const auto s = sweep_srs(f.cases, *f.oracle, f.config, none, 3, 1);
  CHECK(d.rows.at(0).successes == expected_successes);
  CHECK(a.rows.at(0).successes == expected_successes);
  CHECK(s.rows.at(0).successes == 3 * expected_successes);
  CHECK(d.rows[0].scenes == 5);
  CHECK(s.rows[0].scenes == 15);
}

TEST_CASE("sweep row shapes and labels") {
  Fixture f;
  const std::vector<double> offsets = {-1, 0, 1};
  const auto d = sweep_distance(f.cases, *f.oracle, f.config, offsets);
  REQUIRE(d.rows.size() == 3);
  CHECK(d.rows[0].condition == "distance=-1m");
  CHECK(d.rows[2].value == 1.0);
  CHECK(d.kind == "distance");

  const std::vector<double> angles = {-10, 10};
  const auto a = sweep_angle(f.cases, *f.oracle, f.config, angles);
  REQUIRE(a.rows.size() == 2);
  CHECK(a.rows[0].condition == "angle=-10deg");
  CHECK(a.rows[1].condition == "angle=10deg");

  const std::vector<std::size_t> counts = {0, 100, 2000};
  const auto s = sweep_srs(f.cases, *f.oracle, f.config, counts, 10, 3);
  REQUIRE(s.rows.size() == 3);
  for (const auto& r : s.rows) CHECK(r.scenes + r.errors == 50);
  CHECK(s.rows[2].condition == "srs_removed=2000");
  CHECK(s.plot_data()["x"] == nlohmann::json::array({0.0, 100.0, 2000.0}));
  for (const auto& r : s.rows) CHECK(r.mean_calls == 1.0);
}

TEST_CASE("sweeps are deterministic") {
  Fixture f;
  const std::vector<double> offsets = {-0.5, 0.7};
  const std::vector<std::size_t> counts = {500};
  const auto d1 = sweep_distance(f.cases, *f.oracle, f.config, offsets).to_json();
  const auto d2 = sweep_distance(f.cases, *f.oracle, f.config, offsets).to_json();
  auto strip = [](nlohmann::json j) {
    for (auto& r : j["rows"]) r.erase("mean_ms");
    return j;
  };
  CHECK(strip(d1) == strip(d2));
  const auto s1 = sweep_srs(f.cases, *f.oracle, f.config, counts, 4, 9).to_json();
  const auto s2 = sweep_srs(f.cases, *f.oracle, f.config, counts, 4, 9).to_json();
  CHECK(strip(s1) == strip(s2));
}

TEST_CASE("moving the scene moves the judged geometry consistently") {
  Fixture f;
  // a small offset keeps the target inside its moved box; a clean scene stays recognized
  AttackConfig c = f.config;
  const Scene& s = f.scenes[0];
  const PointCloud far_away = {{0, 60, 5, 0}};
  const SweepCase clean_case{&s, far_away};
  const std::vector<double> offsets = {0.0, 0.3};
  const auto d = sweep_distance(std::span(&clean_case, 1), *f.oracle, c, offsets);
  CHECK(d.rows[0].successes == 0);
  CHECK(d.rows[1].successes == 0);
  const std::vector<double> angles = {5.0};
  CHECK(sweep_angle(std::span(&clean_case, 1), *f.oracle, c, angles).rows[0].successes == 0);
}

TEST_CASE("oracle failures are counted per row") {
  Fixture f;
  DeadOracle dead;
  const std::vector<double> offsets = {0.0, 1.0};
  const auto d = sweep_distance(f.cases, dead, f.config, offsets);
  for (const auto& r : d.rows) {
    CHECK(r.scenes == 0);
    CHECK(r.errors == 5);
  }
  CHECK(d.to_csv().find("nan") != std::string::npos);
}

TEST_CASE("sweep argument errors") {
  Fixture f;
  const std::vector<double> bad = {NAN};
  CHECK_THROWS_AS(sweep_distance(f.cases, *f.oracle, f.config, bad), ArgumentError);
  CHECK_THROWS_AS(sweep_angle(f.cases, *f.oracle, f.config, bad), ArgumentError);
  const std::vector<std::size_t> huge = {10000000};
  CHECK_THROWS_AS(sweep_srs(f.cases, *f.oracle, f.config, huge, 1, 1), ArgumentError);
  const std::vector<std::size_t> zero = {0};
  CHECK_THROWS_AS(sweep_srs(f.cases, *f.oracle, f.config, zero, 0, 1), ArgumentError);
  CHECK_THROWS_AS(sweep_srs({}, *f.oracle, f.config, zero, 1, 1), ArgumentError);
}

}
