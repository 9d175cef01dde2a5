#include "lidattack/harness.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

#include "lidattack/defense.hpp"
#include "lidattack/errors.hpp"

namespace lidattack {

std::string format_asr(std::size_t successes, std::size_t scenes) {
  if (scenes == 0) return "nan";
  // integer rounding keeps the rendering exact for the rational value
  const std::uint64_t scaled = (static_cast<std::uint64_t>(successes) * 20000 + scenes) / (2 * scenes);
  std::ostringstream out;
  out << scaled / 10000 << '.';
  const auto frac = std::to_string(scaled % 10000);
  out << std::string(4 - frac.size(), '0') << frac;
  return out.str();
}

namespace {

std::string csv_number(double v) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << v;
  return out.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

std::string trimmed(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

std::string Report::to_csv() const {
  std::ostringstream out;
  out << "# kind=" << kind << " seed=" << seed << '\n';
  out << "condition,scenes,successes,asr,mean_calls,mean_ms\n";
  for (const auto& r : rows) {
    out << csv_field(r.condition) << ',' << r.scenes << ',' << r.successes << ',' << format_asr(r.successes, r.scenes)
        << ',' << csv_number(r.mean_calls) << ',' << csv_number(r.mean_ms) << '\n';
  }
  return out.str();
}

nlohmann::json Report::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"condition", r.condition},
                         {"value", r.value},
                         {"scenes", r.scenes},
                         {"successes", r.successes},
                         {"errors", r.errors},
                         {"asr", format_asr(r.successes, r.scenes)},
                         {"mean_calls", r.mean_calls},
                         {"mean_ms", r.mean_ms}});
  }
  return {{"kind", kind}, {"seed", seed}, {"rows", rows_json}};
}

nlohmann::json Report::plot_data() const {
  nlohmann::json x = nlohmann::json::array();
  nlohmann::json y = nlohmann::json::array();
  for (const auto& r : rows) {
    x.push_back(r.value);
    y.push_back(r.scenes == 0 ? nlohmann::json(nullptr)
                              : nlohmann::json(static_cast<double>(r.successes) / static_cast<double>(r.scenes)));
  }
  return {{"kind", kind}, {"x", x}, {"y", y}};
}

double compute_asr(const std::vector<AttackResult>& results) {
  if (results.empty()) throw ArgumentError("compute_asr: no results");
  std::size_t successes = 0;
  for (const auto& r : results) successes += r.success() ? 1 : 0;
  return static_cast<double>(successes) / static_cast<double>(results.size());
}

Report attack_report(const std::string& condition, const std::vector<AttackResult>& results, std::uint64_t seed) {
  Report report;
  report.kind = "asr";
  report.seed = seed;
  ReportRow row;
  row.condition = condition;
  row.scenes = results.size();
  for (const auto& r : results) {
    row.successes += r.success() ? 1 : 0;
    row.mean_calls += static_cast<double>(r.oracle_calls);
    row.mean_ms += r.wall_ms;
  }
  if (!results.empty()) {
    row.mean_calls /= static_cast<double>(results.size());
    row.mean_ms /= static_cast<double>(results.size());
  }
  report.rows.push_back(row);
  return report;
}

OracleVerdict judge(const Scene& scene, const TriangleMesh& perturbation_mesh, Oracle& oracle, const AttackConfig& config) {
  PointCloud cloud = scene.merged();
  const PointCloud scanned = round_to_float(simulate_scan(perturbation_mesh, config.scan));
  cloud.insert(cloud.end(), scanned.begin(), scanned.end());
  return classify_verdict(oracle.detect(cloud), scene, oracle.info(), config.iou_gate);
}

namespace {

struct Tally {
  ReportRow row;
  double total_ms = 0.0;
  std::uint64_t calls_before = 0;

  void record(const std::function<OracleVerdict()>& trial) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto verdict = trial();
      ++row.scenes;
      if (attack_success(verdict)) ++row.successes;
    } catch (const TransportError&) {
      ++row.errors;
    } catch (const ProtocolError&) {
      ++row.errors;
    }
    total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }

  ReportRow finish(Oracle& oracle) {
    const std::size_t trials = row.scenes + row.errors;
    if (trials > 0) {
      row.mean_calls = static_cast<double>(oracle.calls() - calls_before) / static_cast<double>(trials);
      row.mean_ms = total_ms / static_cast<double>(trials);
    }
    return row;
  }
};

Tally start_row(Oracle& oracle, std::string condition, double value) {
  Tally t;
  t.row.condition = std::move(condition);
  t.row.value = value;
  t.calls_before = oracle.calls();
  return t;
}

void check_cases(std::span<const SweepCase> cases) {
  if (cases.empty()) throw ArgumentError("sweep needs at least one scene");
  for (const auto& c : cases) {
    if (c.scene == nullptr) throw ArgumentError("sweep case without a scene");
    if (c.perturbation.empty()) throw ArgumentError("sweep case without perturbation points");
  }
}

}  // namespace

Report sweep_distance(std::span<const SweepCase> cases, Oracle& oracle, const AttackConfig& config,
                      std::span<const double> offsets) {
  check_cases(cases);
  Report report;
  report.kind = "distance";
  report.seed = config.seed;
  for (double d : offsets) {
    if (!std::isfinite(d)) throw ArgumentError("distance offsets must be finite");
    Tally tally = start_row(oracle, "distance=" + trimmed(d) + "m", d);
    for (const auto& c : cases) {
      tally.record([&] {
        const TriangleMesh mesh = build_perturbation_mesh(c.perturbation, config.mesh_radius);
        if (d == 0.0) return judge(*c.scene, mesh, oracle, config);
        Eigen::Vector3d ray = centroid(c.scene->target) - config.scan.origin;
        ray.z() = 0.0;
        if (!(ray.norm() > 0)) throw ArgumentError("target lies on the sensor axis; distance is undefined");
        const Eigen::Vector3d delta = d * ray.normalized();
        Scene moved = *c.scene;
        moved.target = round_to_float(translate(c.scene->target, delta));
        moved.gt_box.center += delta;
        return judge(moved, translate_mesh(mesh, delta), oracle, config);
      });
    }
    report.rows.push_back(tally.finish(oracle));
  }
  return report;
}

Report sweep_angle(std::span<const SweepCase> cases, Oracle& oracle, const AttackConfig& config,
                   std::span<const double> angles_deg) {
  check_cases(cases);
  Report report;
  report.kind = "angle";
  report.seed = config.seed;
  for (double a : angles_deg) {
    if (!std::isfinite(a)) throw ArgumentError("angles must be finite");
    Tally tally = start_row(oracle, "angle=" + trimmed(a) + "deg", a);
    for (const auto& c : cases) {
      tally.record([&] {
        const TriangleMesh mesh = build_perturbation_mesh(c.perturbation, config.mesh_radius);
        if (a == 0.0) return judge(*c.scene, mesh, oracle, config);
        const double psi = a * std::numbers::pi / 180.0;
        const Eigen::Vector3d pivot = round_to_float({make_point(centroid(c.scene->target))}).front().xyz();
        Scene turned = *c.scene;
        turned.target = round_to_float(rotate_z_about(c.scene->target, pivot, psi));
        turned.gt_box.center = pivot + rotation_z(psi) * (c.scene->gt_box.center - pivot);
        turned.gt_box.yaw = wrap_angle(c.scene->gt_box.yaw + psi);
        return judge(turned, rotate_mesh_z_about(mesh, pivot, psi), oracle, config);
      });
    }
    report.rows.push_back(tally.finish(oracle));
  }
  return report;
}

Report sweep_srs(std::span<const SweepCase> cases, Oracle& oracle, const AttackConfig& config,
                 std::span<const std::size_t> removal_counts, std::size_t trials, std::uint64_t seed) {
  check_cases(cases);
  if (trials < 1) throw ArgumentError("SRS sweep needs at least one trial");
  Report report;
  report.kind = "srs";
  report.seed = seed;
  for (std::size_t j = 0; j < removal_counts.size(); ++j) {
    const std::size_t k = removal_counts[j];
    Tally tally = start_row(oracle, "srs_removed=" + std::to_string(k), static_cast<double>(k));
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const auto& c = cases[i];
      PointCloud adversarial = c.scene->merged();
      const PointCloud scanned =
          round_to_float(simulate_scan(build_perturbation_mesh(c.perturbation, config.mesh_radius), config.scan));
      adversarial.insert(adversarial.end(), scanned.begin(), scanned.end());
      if (k > 0 && k >= adversarial.size()) throw ArgumentError("SRS removal count exceeds the cloud size");
      for (std::size_t t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed =
            seed + 0x9E3779B97F4A7C15ull * (1 + t + trials * (j + removal_counts.size() * i));
        tally.record([&] {
          SrsConfig srs;
          srs.remove_count = k;
          srs.seed = trial_seed;
          return classify_verdict(oracle.detect(srs_filter(adversarial, srs)), *c.scene, oracle.info(), config.iou_gate);
        });
      }
    }
    report.rows.push_back(tally.finish(oracle));
  }
  return report;
}

}  // namespace lidattack
