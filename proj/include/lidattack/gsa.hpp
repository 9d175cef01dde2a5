#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lidattack/errors.hpp"
#include "lidattack/oracle.hpp"
#include "lidattack/scanner.hpp"
#include "lidattack/scene.hpp"

// Hybrid genetic / simulated-annealing search for perturbation points.
namespace lidattack {

using Rng = std::mt19937_64;

// Concatenated IEEE-754 single-precision patterns, x/y/z per point. Bit 0 is
// the most significant bit of the first coordinate.
class Chromosome {
 public:
  Chromosome() = default;
  explicit Chromosome(std::vector<std::uint32_t> words) : words_(std::move(words)) {}

  std::size_t size() const { return 32 * words_.size(); }
  bool bit(std::size_t i) const { return (words_[i / 32] >> (31 - i % 32)) & 1u; }
  void flip(std::size_t i) { words_[i / 32] ^= 1u << (31 - i % 32); }
  const std::vector<std::uint32_t>& words() const { return words_; }

  std::size_t hamming(const Chromosome& other) const;
  std::string hex() const;
  static Chromosome from_hex(std::string_view hex);

  friend bool operator==(const Chromosome&, const Chromosome&) = default;

 private:
  std::vector<std::uint32_t> words_;
};

Chromosome encode(const PointCloud& points);

struct DecodedPoints {
  PointCloud points;
  // Set where a coordinate decoded to NaN or Inf; such points must be repaired.
  std::vector<bool> needs_repair;
  bool any_invalid() const;
};

DecodedPoints decode(const Chromosome& chromosome, std::size_t n0);

// Resamples non-finite points near a random target point and pulls every point
// farther than `shell` from the target back onto the shell along the ray from
// its nearest target point. Output coordinates are float32-representable and
// satisfy the shell bound exactly.
PointCloud repair(const PointCloud& points, const PointCloud& target, double shell, Rng& rng);

struct FitnessWeights {
  double alpha1 = 0.5;
  double beta1 = 0.5;
  double alpha2 = 0.5;
  double beta2 = 0.5;
};

struct AttackConfig {
  std::size_t population = 20;
  double sigma = 0.1;  // std dev, so sigma^2 = 0.01
  std::size_t generations = 1000;
  double k_c = 1.0;
  double k_m = 0.5;
  double temp0 = 300.0;
  std::size_t anneal_steps = 500;
  double lambda = 0.98;
  double temp_min = 1.4;
  std::size_t n0 = 10;
  double shell_distance = 0.2;
  FitnessWeights weights;
  std::uint64_t seed = 1;
  std::uint64_t eval_budget = 50000;

  std::size_t elite_count = 1;
  double sigma_sa = 0.01;
  // Consecutive successful generations needed (once cooled) to stop early; 0 never stops early.
  std::size_t patience = 20;
  double mesh_radius = 0.02;
  double iou_gate = 0.0;
  std::size_t threads = 1;
  ScanConfig scan = ScanConfig::spinning_64();

  void validate() const;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, AttackConfig& c);
AttackConfig load_attack_config(const std::filesystem::path& path);

struct Individual {
  PointCloud points;
  Chromosome chromosome;
  double fitness = 0.0;
  OracleVerdict verdict;
  PointCloud scanned;  // what the simulated sensor returns from the perturbation mesh
  double d1 = 0.0;
  double d2 = 0.0;
  bool evaluated = false;
};

// Successful individuals rank above unsuccessful ones; fitness decides within a group.
bool ranks_above(const Individual& a, const Individual& b);

// Piecewise fitness over the three verdict cases.
double fitness_value(const OracleVerdict& verdict, double d1, double d2, const FitnessWeights& w);

// Scans, detects and scores individuals against one scene. Tracks the
// evaluation budget.
class Evaluator {
 public:
  Evaluator(const Scene& scene, Oracle& oracle, const AttackConfig& config);

  void evaluate(Individual& ind);
  // Runs in parallel when config.threads > 1 and the oracle is thread-safe.
  // Results do not depend on the thread count.
  void evaluate_all(std::span<Individual*> batch);

  PointCloud scan_perturbation(const PointCloud& points) const;
  PointCloud adversarial_cloud(const PointCloud& scanned) const;

  std::uint64_t calls() const { return calls_; }
  const Scene& scene() const { return scene_; }
  const DetectorInfo& info() const { return info_; }

 private:
  void score(Individual& ind);

  const Scene& scene_;
  Oracle& oracle_;
  const AttackConfig& config_;
  DetectorInfo info_;
  PointCloud base_cloud_;
  std::uint64_t calls_ = 0;
};

// decode -> repair -> encode; the result is unevaluated.
Individual realize(const PointCloud& points, const PointCloud& target, double shell, Rng& rng);
Individual realize(const Chromosome& chromosome, std::size_t n0, const PointCloud& target, double shell, Rng& rng);

// Unevaluated initial population: n0 target points per individual plus
// N(0, sigma^2) noise, repaired.
std::vector<Individual> sample_population(const Scene& scene, const AttackConfig& config, Rng& rng);
std::vector<Individual> init_population(const Scene& scene, const AttackConfig& config, Evaluator& evaluator, Rng& rng);

// Index drawn with probability fitness[i] / sum(fitness).
std::size_t roulette_select(std::span<const double> fitness, Rng& rng);

double adaptive_pc(double f_prime, double f_max, double f_avg, double k_c);
double adaptive_pm(double f, double f_max, double f_avg, double k_m);

// Child 1 takes bits [0, k) from a and [k, L) from b; child 2 the reverse.
std::pair<Chromosome, Chromosome> crossover_at(const Chromosome& a, const Chromosome& b, std::size_t k);
// With probability pc, crossover at a uniform k in [1, L-1]; else copies.
std::pair<Chromosome, Chromosome> crossover(const Chromosome& a, const Chromosome& b, double pc, Rng& rng);

Chromosome mutate_at(Chromosome c, std::span<const std::size_t> positions);
// With probability pm, flips 2..6 distinct uniformly chosen bits.
Chromosome mutate(const Chromosome& c, double pm, Rng& rng);

// Top elite_count parents and top (n - elite_count) offspring, ranked best first.
std::vector<Individual> elite_update(const std::vector<Individual>& parents, const std::vector<Individual>& offspring,
                                     std::size_t elite_count);

// Temperature after k cooling steps is temp0 * lambda^k.
class AnnealSchedule {
 public:
  AnnealSchedule(double temp0, double lambda) : temp0_(temp0), lambda_(lambda) {}
  double temperature() const;
  void cool() { ++steps_; }
  std::size_t steps() const { return steps_; }

 private:
  double temp0_;
  double lambda_;
  std::size_t steps_ = 0;
};

double metropolis_acceptance(double delta_f, double temperature);

// Up to `steps` Metropolis moves from `start` (stopping once the schedule is
// at or below config.temp_min). Returns the best individual accepted on the way.
Individual anneal(const Individual& start, AnnealSchedule& schedule, std::size_t steps, Evaluator& evaluator,
                  const AttackConfig& config, Rng& rng);

// SA moves allotted to generation g so that all generations together use config.anneal_steps.
std::size_t anneal_steps_for_generation(std::size_t g, const AttackConfig& config);

struct GenerationStats {
  std::size_t generation = 0;
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
  VerdictCase best_case = VerdictCase::RecognizedCorrect;
  double temperature = 0.0;
  std::uint64_t oracle_calls = 0;
};

struct AttackResult {
  Individual best;
  std::vector<GenerationStats> trace;  // entry 0 is the initial population
  std::uint64_t oracle_calls = 0;
  double wall_ms = 0.0;
  bool budget_exhausted = false;
  std::uint64_t seed = 0;
  std::string detector;

  bool success() const { return best.evaluated && attack_success(best.verdict); }
};

// Wall time is not serialized so that reruns are byte-identical.
void to_json(nlohmann::json& j, const AttackResult& r);
void from_json(const nlohmann::json& j, AttackResult& r);

// Oracle transport/protocol failure during an attack. Holds what was found so far.
class AttackAborted : public Error {
 public:
  AttackAborted(const std::string& what, AttackResult partial, bool transport)
      : Error(what), partial_(std::move(partial)), transport_(transport) {}
  const AttackResult& partial() const { return partial_; }
  bool transport() const { return transport_; }

 private:
  AttackResult partial_;
  bool transport_;
};

AttackResult run_attack(const Scene& scene, Oracle& oracle, const AttackConfig& config);

}  // namespace lidattack
