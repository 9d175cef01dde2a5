#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidattack/gsa.hpp"

namespace lidattack {

struct ReportRow {
  std::string condition;
  double value = 0.0;  // the swept quantity; 0 for plain ASR rows
  std::size_t scenes = 0;
  std::size_t successes = 0;
  std::size_t errors = 0;  // trials lost to oracle failures, excluded from `scenes`
  double mean_calls = 0.0;
  double mean_ms = 0.0;
};

// successes / scenes rendered with exactly four decimals, rounded half up.
std::string format_asr(std::size_t successes, std::size_t scenes);

struct Report {
  std::string kind;  // "asr", "distance", "angle" or "srs"
  std::uint64_t seed = 0;
  std::vector<ReportRow> rows;

  std::string to_csv() const;
  nlohmann::json to_json() const;
  // {"kind", "x": [...], "y": [...]} with y the ASR of each row.
  nlohmann::json plot_data() const;
};

double compute_asr(const std::vector<AttackResult>& results);
Report attack_report(const std::string& condition, const std::vector<AttackResult>& results, std::uint64_t seed);

// A scene together with the perturbation points found for it.
struct SweepCase {
  const Scene* scene = nullptr;
  PointCloud perturbation;
};

// Moves target, box and perturbation by `offset` meters along the horizontal
// sensor-to-target ray, rescans the perturbation and re-detects.
Report sweep_distance(std::span<const SweepCase> cases, Oracle& oracle, const AttackConfig& config,
                      std::span<const double> offsets);
// Rotates target, box and perturbation mesh by psi degrees about the target centroid.
Report sweep_angle(std::span<const SweepCase> cases, Oracle& oracle, const AttackConfig& config,
                   std::span<const double> angles_deg);
// Removes k random points from the merged adversarial cloud, `trials` times per k.
Report sweep_srs(std::span<const SweepCase> cases, Oracle& oracle, const AttackConfig& config,
                 std::span<const std::size_t> removal_counts, std::size_t trials, std::uint64_t seed);

// Verdict of one placed adversarial scene: scene cloud plus the scan of the
// perturbation mesh.
OracleVerdict judge(const Scene& scene, const TriangleMesh& perturbation_mesh, Oracle& oracle, const AttackConfig& config);

}  // namespace lidattack
