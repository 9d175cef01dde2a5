#include "lidattack/gsa.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

namespace lidattack {

std::size_t Chromosome::hamming(const Chromosome& other) const {
  if (other.words_.size() != words_.size()) throw ArgumentError("hamming: chromosome lengths differ");
  std::size_t d = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) d += static_cast<std::size_t>(std::popcount(words_[i] ^ other.words_[i]));
  return d;
}

std::string Chromosome::hex() const {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(8 * words_.size());
  for (auto w : words_) {
    for (int shift = 28; shift >= 0; shift -= 4) out.push_back(digits[(w >> shift) & 0xF]);
  }
  return out;
}

Chromosome Chromosome::from_hex(std::string_view hex) {
  if (hex.size() % 8 != 0) throw ArgumentError("chromosome hex length must be a multiple of 8");
  std::vector<std::uint32_t> words;
  words.reserve(hex.size() / 8);
  for (std::size_t i = 0; i < hex.size(); i += 8) {
    std::uint32_t w = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      const char c = hex[i + k];
      std::uint32_t v;
      if (c >= '0' && c <= '9') v = static_cast<std::uint32_t>(c - '0');
      else if (c >= 'a' && c <= 'f') v = static_cast<std::uint32_t>(c - 'a' + 10);
      else if (c >= 'A' && c <= 'F') v = static_cast<std::uint32_t>(c - 'A' + 10);
      else throw ArgumentError(std::string("invalid hex digit '") + c + "'");
      w = (w << 4) | v;
    }
    words.push_back(w);
  }
  return Chromosome(std::move(words));
}

Chromosome encode(const PointCloud& points) {
  std::vector<std::uint32_t> words;
  words.reserve(3 * points.size());
  for (const auto& p : points) {
    for (double v : {p.x, p.y, p.z}) {
      if (!std::isfinite(v)) throw ArgumentError("encode: non-finite coordinate");
      words.push_back(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return Chromosome(std::move(words));
}

bool DecodedPoints::any_invalid() const {
  return std::find(needs_repair.begin(), needs_repair.end(), true) != needs_repair.end();
}

DecodedPoints decode(const Chromosome& chromosome, std::size_t n0) {
  if (chromosome.size() != 96 * n0) {
    throw ArgumentError("decode: chromosome has " + std::to_string(chromosome.size()) + " bits, expected " +
                        std::to_string(96 * n0));
  }
  DecodedPoints out;
  out.points.resize(n0);
  out.needs_repair.assign(n0, false);
  const auto& w = chromosome.words();
  for (std::size_t i = 0; i < n0; ++i) {
    const float x = std::bit_cast<float>(w[3 * i]);
    const float y = std::bit_cast<float>(w[3 * i + 1]);
    const float z = std::bit_cast<float>(w[3 * i + 2]);
    if (std::isfinite(x) && std::isfinite(y) && std::isfinite(z)) {
      out.points[i] = {x, y, z, 0.0};
    } else {
      out.points[i] = {0.0, 0.0, 0.0, 0.0};
      out.needs_repair[i] = true;
    }
  }
  return out;
}

namespace {

Eigen::Vector3d to_float(const Eigen::Vector3d& v) {
  return {static_cast<float>(v.x()), static_cast<float>(v.y()), static_cast<float>(v.z())};
}

// Radial projection onto the shell, then float rounding. Rounding can land a
// hair outside, so the scale is shaved until the float point is inside.
Eigen::Vector3d project_into_shell(const Eigen::Vector3d& p, const PointCloud& target, double shell) {
  auto [idx, d] = nearest_point(target, p);
  Eigen::Vector3d q = to_float(p);
  if (d <= shell) {
    auto [idx2, d2] = nearest_point(target, q);
    if (d2 <= shell) return q;
    idx = idx2;
    d = d2;
  }
  const Eigen::Vector3d anchor = target[idx].xyz();
  const Eigen::Vector3d dir = p - anchor;
  const double len = dir.norm();
  if (!(len > 0)) return to_float(anchor);
  double scale = shell / len;
  for (int attempt = 0; attempt < 64; ++attempt) {
    q = to_float(anchor + dir * scale);
    if (nearest_point(target, q).second <= shell) return q;
    scale *= 1.0 - 1e-7 * static_cast<double>(1 << std::min(attempt, 20));
  }
  return to_float(anchor);
}

}  // namespace

PointCloud repair(const PointCloud& points, const PointCloud& target, double shell, Rng& rng) {
  if (target.empty()) throw ArgumentError("repair: empty target cloud");
  if (!(shell >= 0)) throw ArgumentError("repair: negative shell distance");
  PointCloud out;
  out.reserve(points.size());
  std::uniform_int_distribution<std::size_t> pick(0, target.size() - 1);
  std::normal_distribution<double> noise(0.0, 0.5 * shell);
  for (const auto& p : points) {
    Eigen::Vector3d v = p.xyz();
    if (!v.allFinite()) {
      v = target[pick(rng)].xyz();
      if (shell > 0) v += Eigen::Vector3d(noise(rng), noise(rng), noise(rng));
    }
    out.push_back(make_point(project_into_shell(v, target, shell), 0.0));
  }
  return out;
}

void AttackConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("attack config: " + m); };
  if (population < 2) fail("population must be at least 2");
  if (!(sigma >= 0) || !std::isfinite(sigma)) fail("sigma must be non-negative");
  if (!(k_m > 0 && k_m < k_c && k_c <= 1)) fail("need 0 < k_m < k_c <= 1");
  if (!(temp0 > 0) || !std::isfinite(temp0)) fail("temp0 must be positive");
  if (!(lambda > 0 && lambda < 1)) fail("lambda must lie in (0, 1)");
  if (!(temp_min > 0)) fail("temp_min must be positive");
  if (n0 < 1) fail("n0 must be at least 1");
  if (!(shell_distance > 0) || !std::isfinite(shell_distance)) fail("shell_distance must be positive");
  for (double w : {weights.alpha1, weights.beta1, weights.alpha2, weights.beta2}) {
    if (!(w >= 0) || !std::isfinite(w)) fail("fitness weights must be non-negative");
  }
  if (eval_budget < population) fail("eval_budget must cover the initial population");
  if (elite_count >= population) fail("elite_count must be smaller than population");
  if (!(sigma_sa >= 0) || !std::isfinite(sigma_sa)) fail("sigma_sa must be non-negative");
  if (!(mesh_radius > 0) || !std::isfinite(mesh_radius)) fail("mesh_radius must be positive");
  if (!(iou_gate >= 0 && iou_gate <= 1)) fail("iou_gate must lie in [0, 1]");
  if (threads < 1) fail("threads must be at least 1");
  try {
    scan.validate();
  } catch (const Error& e) {
    fail(e.what());
  }
}

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = nlohmann::json{{"population", c.population},
                     {"sigma", c.sigma},
                     {"generations", c.generations},
                     {"k_c", c.k_c},
                     {"k_m", c.k_m},
                     {"temp0", c.temp0},
                     {"anneal_steps", c.anneal_steps},
                     {"lambda", c.lambda},
                     {"temp_min", c.temp_min},
                     {"n0", c.n0},
                     {"shell_distance", c.shell_distance},
                     {"alpha1", c.weights.alpha1},
                     {"beta1", c.weights.beta1},
                     {"alpha2", c.weights.alpha2},
                     {"beta2", c.weights.beta2},
                     {"seed", c.seed},
                     {"eval_budget", c.eval_budget},
                     {"elite_count", c.elite_count},
                     {"sigma_sa", c.sigma_sa},
                     {"patience", c.patience},
                     {"mesh_radius", c.mesh_radius},
                     {"iou_gate", c.iou_gate},
                     {"threads", c.threads},
                     {"scan", c.scan}};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  if (!j.is_object()) throw ConfigError("attack config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "population") value.get_to(c.population);
      else if (key == "sigma") value.get_to(c.sigma);
      else if (key == "generations") value.get_to(c.generations);
      else if (key == "k_c") value.get_to(c.k_c);
      else if (key == "k_m") value.get_to(c.k_m);
      else if (key == "temp0") value.get_to(c.temp0);
      else if (key == "anneal_steps") value.get_to(c.anneal_steps);
      else if (key == "lambda") value.get_to(c.lambda);
      else if (key == "temp_min") value.get_to(c.temp_min);
      else if (key == "n0") value.get_to(c.n0);
      else if (key == "shell_distance") value.get_to(c.shell_distance);
      else if (key == "alpha1") value.get_to(c.weights.alpha1);
      else if (key == "beta1") value.get_to(c.weights.beta1);
      else if (key == "alpha2") value.get_to(c.weights.alpha2);
      else if (key == "beta2") value.get_to(c.weights.beta2);
      else if (key == "seed") value.get_to(c.seed);
      else if (key == "eval_budget") value.get_to(c.eval_budget);
      else if (key == "elite_count") value.get_to(c.elite_count);
      else if (key == "sigma_sa") value.get_to(c.sigma_sa);
      else if (key == "patience") value.get_to(c.patience);
      else if (key == "mesh_radius") value.get_to(c.mesh_radius);
      else if (key == "iou_gate") value.get_to(c.iou_gate);
      else if (key == "threads") value.get_to(c.threads);
      else if (key == "scan") value.get_to(c.scan);
      else throw ConfigError("attack config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("attack config: ") + e.what());
  }
  c.validate();
}

AttackConfig load_attack_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open attack config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("attack config " + path.string() + ": " + e.what());
  }
  return j.get<AttackConfig>();
}

bool ranks_above(const Individual& a, const Individual& b) {
  const bool sa = attack_success(a.verdict);
  const bool sb = attack_success(b.verdict);
  if (sa != sb) return sa;
  return a.fitness > b.fitness;
}

double fitness_value(const OracleVerdict& verdict, double d1, double d2, const FitnessWeights& w) {
  const double s = verdict.score_s;
  switch (verdict.kind) {
    case VerdictCase::RecognizedCorrect:
      return 1.0 - s;
    case VerdictCase::Hidden:
      return (1.0 - s) + w.alpha1 / (1.0 + d1) + w.beta1 / (1.0 + d2);
    case VerdictCase::Misclassified:
      return s + w.alpha2 / (1.0 + d1) + w.beta2 / (1.0 + d2);
  }
  return 0.0;
}

Evaluator::Evaluator(const Scene& scene, Oracle& oracle, const AttackConfig& config)
    : scene_(scene), oracle_(oracle), config_(config), info_(oracle.info()), base_cloud_(scene.merged()) {}

PointCloud Evaluator::scan_perturbation(const PointCloud& points) const {
  return round_to_float(simulate_scan(build_perturbation_mesh(points, config_.mesh_radius), config_.scan));
}

PointCloud Evaluator::adversarial_cloud(const PointCloud& scanned) const {
  PointCloud cloud;
  cloud.reserve(base_cloud_.size() + scanned.size());
  cloud.insert(cloud.end(), base_cloud_.begin(), base_cloud_.end());
  cloud.insert(cloud.end(), scanned.begin(), scanned.end());
  return cloud;
}

void Evaluator::score(Individual& ind) {
  ind.scanned = scan_perturbation(ind.points);
  const auto detections = oracle_.detect(adversarial_cloud(ind.scanned));
  ind.verdict = classify_verdict(detections, scene_, info_, config_.iou_gate);
  ind.d1 = chamfer_to_target(ind.points, scene_.target);
  ind.d2 = mean_pairwise_distance(ind.points);
  ind.fitness = fitness_value(ind.verdict, ind.d1, ind.d2, config_.weights);
  ind.evaluated = true;
}

void Evaluator::evaluate(Individual& ind) {
  if (calls_ >= config_.eval_budget) throw BudgetExhaustedError("evaluation budget exhausted");
  ++calls_;
  score(ind);
}

void Evaluator::evaluate_all(std::span<Individual*> batch) {
  const std::uint64_t room = config_.eval_budget - std::min(calls_, config_.eval_budget);
  const std::size_t runnable = static_cast<std::size_t>(std::min<std::uint64_t>(room, batch.size()));
  const std::size_t workers = std::min(config_.threads, runnable);
  if (workers <= 1 || !oracle_.thread_safe()) {
    for (auto* ind : batch) evaluate(*ind);
    return;
  }
  calls_ += runnable;
  std::vector<std::exception_ptr> errors(runnable);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < runnable; i += workers) {
        try {
          score(*batch[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (runnable < batch.size()) throw BudgetExhaustedError("evaluation budget exhausted");
}

Individual realize(const PointCloud& points, const PointCloud& target, double shell, Rng& rng) {
  Individual ind;
  ind.points = repair(points, target, shell, rng);
  ind.chromosome = encode(ind.points);
  return ind;
}

Individual realize(const Chromosome& chromosome, std::size_t n0, const PointCloud& target, double shell, Rng& rng) {
  auto decoded = decode(chromosome, n0);
  for (std::size_t i = 0; i < n0; ++i) {
    if (decoded.needs_repair[i]) decoded.points[i].x = std::numeric_limits<double>::quiet_NaN();
  }
  return realize(decoded.points, target, shell, rng);
}

std::vector<Individual> sample_population(const Scene& scene, const AttackConfig& config, Rng& rng) {
  if (scene.target.empty()) throw ArgumentError("init_population: empty target cloud");
  std::uniform_int_distribution<std::size_t> pick(0, scene.target.size() - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Individual> pop;
  pop.reserve(config.population);
  for (std::size_t i = 0; i < config.population; ++i) {
    PointCloud pts;
    pts.reserve(config.n0);
    for (std::size_t k = 0; k < config.n0; ++k) {
      Eigen::Vector3d v = scene.target[pick(rng)].xyz();
      const Eigen::Vector3d z(noise(rng), noise(rng), noise(rng));
      v += config.sigma * z;
      pts.push_back(make_point(v, 0.0));
    }
    pop.push_back(realize(pts, scene.target, config.shell_distance, rng));
  }
  return pop;
}

std::vector<Individual> init_population(const Scene& scene, const AttackConfig& config, Evaluator& evaluator, Rng& rng) {
  auto pop = sample_population(scene, config, rng);
  std::vector<Individual*> batch;
  for (auto& ind : pop) batch.push_back(&ind);
  evaluator.evaluate_all(batch);
  return pop;
}

std::size_t roulette_select(std::span<const double> fitness, Rng& rng) {
  if (fitness.empty()) throw ArgumentError("roulette_select: empty population");
  double total = 0.0;
  for (double f : fitness) {
    if (!std::isfinite(f) || f < 0) throw NumericError("roulette_select: fitness must be finite and non-negative");
    total += f;
  }
  if (!(total > 0) || !std::isfinite(total)) throw NumericError("roulette_select: non-positive total fitness");
  const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < fitness.size(); ++i) {
    acc += fitness[i];
    if (r < acc) return i;
  }
  // r landed on the rounding gap at the top; give it to the last positive entry
  for (std::size_t i = fitness.size(); i-- > 0;) {
    if (fitness[i] > 0) return i;
  }
  return fitness.size() - 1;
}

namespace {

double adaptive_rate(double f, double f_max, double f_avg, double k) {
  if (!(f_max > f_avg) || f < f_avg) return k;
  return std::clamp(k * (f_max - f) / (f_max - f_avg), 0.0, k);
}

}  // namespace

double adaptive_pc(double f_prime, double f_max, double f_avg, double k_c) {
  return adaptive_rate(f_prime, f_max, f_avg, k_c);
}

double adaptive_pm(double f, double f_max, double f_avg, double k_m) { return adaptive_rate(f, f_max, f_avg, k_m); }

std::pair<Chromosome, Chromosome> crossover_at(const Chromosome& a, const Chromosome& b, std::size_t k) {
  if (a.size() != b.size()) throw ArgumentError("crossover: chromosome lengths differ");
  if (k < 1 || k >= a.size()) throw ArgumentError("crossover: cut point out of range");
  auto wa = a.words();
  auto wb = b.words();
  const std::size_t word = k / 32;
  const std::size_t offset = k % 32;
  const std::uint32_t head = offset == 0 ? 0u : ~0u << (32 - offset);
  const std::uint32_t ca = (wa[word] & head) | (wb[word] & ~head);
  const std::uint32_t cb = (wb[word] & head) | (wa[word] & ~head);
  wa[word] = ca;
  wb[word] = cb;
  for (std::size_t i = word + 1; i < wa.size(); ++i) std::swap(wa[i], wb[i]);
  return {Chromosome(std::move(wa)), Chromosome(std::move(wb))};
}

std::pair<Chromosome, Chromosome> crossover(const Chromosome& a, const Chromosome& b, double pc, Rng& rng) {
  if (a.size() != b.size()) throw ArgumentError("crossover: chromosome lengths differ");
  if (a.size() < 2) return {a, b};
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (!(u < pc)) return {a, b};
  const std::size_t k = std::uniform_int_distribution<std::size_t>(1, a.size() - 1)(rng);
  return crossover_at(a, b, k);
}

Chromosome mutate_at(Chromosome c, std::span<const std::size_t> positions) {
  for (auto p : positions) {
    if (p >= c.size()) throw ArgumentError("mutate: bit position out of range");
    c.flip(p);
  }
  return c;
}

Chromosome mutate(const Chromosome& c, double pm, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (!(u < pm) || c.size() < 2) return c;
  const std::size_t k = std::min<std::size_t>(std::uniform_int_distribution<std::size_t>(2, 6)(rng), c.size());
  std::vector<std::size_t> positions;
  std::uniform_int_distribution<std::size_t> pos(0, c.size() - 1);
  while (positions.size() < k) {
    const std::size_t p = pos(rng);
    if (std::find(positions.begin(), positions.end(), p) == positions.end()) positions.push_back(p);
  }
  return mutate_at(c, positions);
}

namespace {

std::vector<std::size_t> ranked_order(const std::vector<Individual>& pop) {
  std::vector<std::size_t> order(pop.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ranks_above(pop[a], pop[b]); });
  return order;
}

}  // namespace

std::vector<Individual> elite_update(const std::vector<Individual>& parents, const std::vector<Individual>& offspring,
                                     std::size_t elite_count) {
  const std::size_t n = parents.size();
  if (offspring.size() != n) throw ArgumentError("elite_update: parent and offspring counts differ");
  if (elite_count >= n) throw ArgumentError("elite_update: elite_count must be smaller than the population");
  std::vector<Individual> next;
  next.reserve(n);
  const auto po = ranked_order(parents);
  const auto oo = ranked_order(offspring);
  for (std::size_t i = 0; i < elite_count; ++i) next.push_back(parents[po[i]]);
  for (std::size_t i = 0; i < n - elite_count; ++i) next.push_back(offspring[oo[i]]);
  std::stable_sort(next.begin(), next.end(), ranks_above);
  return next;
}

double AnnealSchedule::temperature() const { return temp0_ * std::pow(lambda_, static_cast<double>(steps_)); }

double metropolis_acceptance(double delta_f, double temperature) {
  if (delta_f >= 0) return 1.0;
  if (!(temperature > 0)) return 0.0;
  return std::exp(delta_f / temperature);
}

Individual anneal(const Individual& start, AnnealSchedule& schedule, std::size_t steps, Evaluator& evaluator,
                  const AttackConfig& config, Rng& rng) {
  const PointCloud& target = evaluator.scene().target;
  Individual current = start;
  Individual best = start;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t s = 0; s < steps && schedule.temperature() > config.temp_min; ++s) {
    PointCloud proposal = current.points;
    for (auto& p : proposal) {
      p.x += config.sigma_sa * noise(rng);
      p.y += config.sigma_sa * noise(rng);
      p.z += config.sigma_sa * noise(rng);
    }
    Individual cand = realize(proposal, target, config.shell_distance, rng);
    evaluator.evaluate(cand);
    const double delta = cand.fitness - current.fitness;
    const bool accept = delta >= 0 || unit(rng) < metropolis_acceptance(delta, schedule.temperature());
    if (accept) {
      current = std::move(cand);
      if (ranks_above(current, best)) best = current;
    }
    schedule.cool();
  }
  return best;
}

std::size_t anneal_steps_for_generation(std::size_t g, const AttackConfig& config) {
  if (config.generations == 0) return 0;
  const auto num = static_cast<std::uint64_t>(config.anneal_steps);
  const auto t = static_cast<std::uint64_t>(config.generations);
  return static_cast<std::size_t>((g + 1) * num / t - g * num / t);
}

namespace {

GenerationStats stats_of(std::size_t generation, const std::vector<Individual>& pop, const AnnealSchedule& schedule,
                         std::uint64_t calls) {
  GenerationStats s;
  s.generation = generation;
  const Individual* best = &pop.front();
  double sum = 0.0;
  for (const auto& ind : pop) {
    sum += ind.fitness;
    if (ranks_above(ind, *best)) best = &ind;
  }
  s.best_fitness = best->fitness;
  s.mean_fitness = sum / static_cast<double>(pop.size());
  s.best_case = best->verdict.kind;
  s.temperature = schedule.temperature();
  s.oracle_calls = calls;
  return s;
}

const Individual& best_of(const std::vector<Individual>& pop) {
  const Individual* best = &pop.front();
  for (const auto& ind : pop) {
    if (ranks_above(ind, *best)) best = &ind;
  }
  return *best;
}

constexpr double kFitnessFloor = 1e-9;

}  // namespace

AttackResult run_attack(const Scene& scene, Oracle& oracle, const AttackConfig& config) {
  config.validate();
  if (scene.target.empty()) throw ArgumentError("run_attack: scene has no target points");
  const auto started = std::chrono::steady_clock::now();
  Rng rng(config.seed);
  Evaluator evaluator(scene, oracle, config);
  AnnealSchedule schedule(config.temp0, config.lambda);
  AttackResult result;
  result.seed = config.seed;
  result.detector = evaluator.info().name;

  std::vector<Individual> pop;
  auto finish = [&] {
    result.oracle_calls = evaluator.calls();
    result.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  };
  auto keep_best = [&](const std::vector<Individual>& candidates) {
    for (const auto& ind : candidates) {
      if (ind.evaluated && (!result.best.evaluated || ranks_above(ind, result.best))) result.best = ind;
    }
  };

  try {
    pop = sample_population(scene, config, rng);
    {
      std::vector<Individual*> batch;
      for (auto& ind : pop) batch.push_back(&ind);
      try {
        evaluator.evaluate_all(batch);
      } catch (const BudgetExhaustedError&) {
        keep_best(pop);
        throw;
      }
    }
    std::stable_sort(pop.begin(), pop.end(), ranks_above);
    keep_best(pop);
    result.trace.push_back(stats_of(0, pop, schedule, evaluator.calls()));

    std::size_t streak = attack_success(pop.front().verdict) ? 1 : 0;
    std::vector<double> fit(pop.size());
    for (std::size_t g = 0; g < config.generations; ++g) {
      if (config.patience > 0 && schedule.temperature() <= config.temp_min && streak >= config.patience) break;

      for (std::size_t i = 0; i < pop.size(); ++i) fit[i] = std::max(pop[i].fitness, kFitnessFloor);
      const double f_max = *std::max_element(fit.begin(), fit.end());
      const double f_avg = std::accumulate(fit.begin(), fit.end(), 0.0) / static_cast<double>(fit.size());

      std::vector<Individual> offspring;
      offspring.reserve(pop.size());
      while (offspring.size() < pop.size()) {
        const std::size_t ia = roulette_select(fit, rng);
        const std::size_t ib = roulette_select(fit, rng);
        const double pc = adaptive_pc(std::max(fit[ia], fit[ib]), f_max, f_avg, config.k_c);
        auto children = crossover(pop[ia].chromosome, pop[ib].chromosome, pc, rng);
        for (auto [child, parent] : {std::pair{&children.first, ia}, std::pair{&children.second, ib}}) {
          if (offspring.size() == pop.size()) break;
          const double pm = adaptive_pm(fit[parent], f_max, f_avg, config.k_m);
          Individual ind = realize(mutate(*child, pm, rng), config.n0, scene.target, config.shell_distance, rng);
          // An unchanged chromosome keeps its parent's cached evaluation.
          if (ind.chromosome == pop[parent].chromosome) ind = pop[parent];
          offspring.push_back(std::move(ind));
        }
      }

      std::vector<Individual*> batch;
      for (auto& ind : offspring) {
        if (!ind.evaluated) batch.push_back(&ind);
      }
      try {
        evaluator.evaluate_all(batch);
      } catch (const BudgetExhaustedError&) {
        keep_best(offspring);
        throw;
      }
      pop = elite_update(pop, offspring, config.elite_count);

      const std::size_t steps = anneal_steps_for_generation(g, config);
      if (steps > 0 && schedule.temperature() > config.temp_min) {
        try {
          pop.front() = anneal(pop.front(), schedule, steps, evaluator, config, rng);
        } catch (const BudgetExhaustedError&) {
          keep_best(pop);
          throw;
        }
      }
      keep_best(pop);
      result.trace.push_back(stats_of(g + 1, pop, schedule, evaluator.calls()));
      streak = attack_success(best_of(pop).verdict) ? streak + 1 : 0;
    }
  } catch (const BudgetExhaustedError&) {
    result.budget_exhausted = true;
  } catch (const TransportError& e) {
    finish();
    throw AttackAborted(e.what(), std::move(result), true);
  } catch (const ProtocolError& e) {
    finish();
    throw AttackAborted(e.what(), std::move(result), false);
  }
  finish();
  return result;
}

namespace {

nlohmann::json points_json(const PointCloud& cloud) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : cloud) arr.push_back({p.x, p.y, p.z});
  return arr;
}

PointCloud points_from_json(const nlohmann::json& arr) {
  PointCloud cloud;
  for (const auto& row : arr) {
    if (!row.is_array() || row.size() != 3) throw ConfigError("point entries must be [x, y, z]");
    cloud.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>(), 0.0});
  }
  return cloud;
}

}  // namespace

void to_json(nlohmann::json& j, const AttackResult& r) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : r.trace) {
    trace.push_back({{"generation", s.generation},
                     {"best_fitness", s.best_fitness},
                     {"mean_fitness", s.mean_fitness},
                     {"best_case", to_string(s.best_case)},
                     {"temperature", s.temperature},
                     {"oracle_calls", s.oracle_calls}});
  }
  nlohmann::json scanned = points_json(r.best.scanned);
  for (std::size_t i = 0; i < r.best.scanned.size(); ++i) scanned[i].push_back(r.best.scanned[i].intensity);
  j = nlohmann::json{{"detector", r.detector},
                     {"seed", r.seed},
                     {"success", r.success()},
                     {"verdict", r.best.verdict},
                     {"fitness", r.best.fitness},
                     {"d1", r.best.d1},
                     {"d2", r.best.d2},
                     {"points", points_json(r.best.points)},
                     {"chromosome", r.best.chromosome.hex()},
                     {"scanned_points", scanned},
                     {"oracle_calls", r.oracle_calls},
                     {"budget_exhausted", r.budget_exhausted},
                     {"trace", trace}};
}

void from_json(const nlohmann::json& j, AttackResult& r) {
  try {
    r = AttackResult{};
    r.detector = j.at("detector").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.best.verdict = j.at("verdict").get<OracleVerdict>();
    r.best.fitness = j.at("fitness").get<double>();
    r.best.d1 = j.at("d1").get<double>();
    r.best.d2 = j.at("d2").get<double>();
    r.best.points = points_from_json(j.at("points"));
    r.best.chromosome = Chromosome::from_hex(j.at("chromosome").get<std::string>());
    if (r.best.chromosome != encode(r.best.points)) throw ConfigError("result chromosome does not match its points");
    for (const auto& row : j.at("scanned_points")) {
      if (!row.is_array() || row.size() != 4) throw ConfigError("scanned point entries must be [x, y, z, intensity]");
      r.best.scanned.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>(), row[3].get<double>()});
    }
    r.best.evaluated = true;
    r.oracle_calls = j.at("oracle_calls").get<std::uint64_t>();
    r.budget_exhausted = j.at("budget_exhausted").get<bool>();
    for (const auto& s : j.at("trace")) {
      GenerationStats g;
      g.generation = s.at("generation").get<std::size_t>();
      g.best_fitness = s.at("best_fitness").get<double>();
      g.mean_fitness = s.at("mean_fitness").get<double>();
      g.best_case = verdict_case_from_string(s.at("best_case").get<std::string>());
      g.temperature = s.at("temperature").get<double>();
      g.oracle_calls = s.at("oracle_calls").get<std::uint64_t>();
      r.trace.push_back(g);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("attack result: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("attack result: ") + e.what());
  }
}

}  // namespace lidattack
