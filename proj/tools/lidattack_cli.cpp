// lidattack: command-line front end.
//
// Exit codes
//   0   success (for `attack`: the attack succeeded)
//   3   attack ran to completion without success
//   10  bad arguments, configuration or input files
//   11  oracle transport or protocol failure
//   12  evaluation budget exhausted before the attack succeeded
//   1   anything else

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lidattack/defense.hpp"
#include "lidattack/errors.hpp"
#include "lidattack/external_oracle.hpp"
#include "lidattack/gsa.hpp"
#include "lidattack/harness.hpp"
#include "lidattack/synthetic.hpp"

namespace fs = std::filesystem;
using namespace lidattack;

namespace {

constexpr int kExitAttackFailed = 3;
constexpr int kExitConfig = 10;
constexpr int kExitOracle = 11;
constexpr int kExitBudget = 12;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

AttackConfig read_config(const std::string& path, std::optional<std::uint64_t> seed) {
  AttackConfig config = path.empty() ? AttackConfig{} : load_attack_config(path);
  if (seed) config.seed = *seed;
  config.validate();
  return config;
}

AttackResult load_result(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open result " + path.string());
  try {
    return nlohmann::json::parse(in).get<AttackResult>();
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("result " + path.string() + ": " + e.what());
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v;
    if (!(is >> v) || !(is >> std::ws).eof()) throw ArgumentError("cannot parse list entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ArgumentError("empty value list");
  return out;
}

void write_attack_outputs(const AttackResult& result, const Scene& scene, const AttackConfig& config,
                          const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_text(out_dir / "result.json", nlohmann::json(result).dump(2) + "\n");
  if (!result.best.evaluated) return;
  PointCloud adv = scene.merged();
  adv.insert(adv.end(), result.best.scanned.begin(), result.best.scanned.end());
  save_kitti_bin(adv, out_dir / "adv.bin");
  save_kitti_bin(result.best.points, out_dir / "perturbation.bin");
  export_stl(build_perturbation_mesh(result.best.points, config.mesh_radius), out_dir / "perturbation.stl");
}

struct AttackArgs {
  std::string scene, config, oracle = "builtin:voxel0.2", out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
};

int cmd_attack(const AttackArgs& a) {
  AttackConfig config = read_config(a.config, a.seed);
  if (a.threads > 0) config.threads = a.threads;
  const Scene scene = load_scene(a.scene);
  auto oracle = open_oracle(a.oracle);
  AttackResult result;
  try {
    result = run_attack(scene, *oracle, config);
  } catch (const AttackAborted& e) {
    write_attack_outputs(e.partial(), scene, config, a.out);
    throw;
  }
  write_attack_outputs(result, scene, config, a.out);
  std::printf("seed %llu  detector %s  verdict %s  fitness %.6f  oracle calls %llu\n",
              static_cast<unsigned long long>(config.seed), result.detector.c_str(), to_string(result.best.verdict.kind),
              result.best.fitness, static_cast<unsigned long long>(result.oracle_calls));
  if (result.success()) return 0;
  return result.budget_exhausted ? kExitBudget : kExitAttackFailed;
}

struct ScanArgs {
  std::string mesh, scan_config, out;
};

int cmd_scan(const ScanArgs& a) {
  ScanConfig scan = ScanConfig::spinning_64();
  if (!a.scan_config.empty()) {
    std::ifstream in(a.scan_config);
    if (!in) throw IoError("cannot open scan config " + a.scan_config);
    try {
      scan = nlohmann::json::parse(in).get<ScanConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("scan config " + a.scan_config + ": " + e.what());
    }
  }
  scan.validate();
  const PointCloud cloud = round_to_float(simulate_scan(import_stl(a.mesh), scan));
  save_kitti_bin(cloud, a.out);
  std::printf("%zu points\n", cloud.size());
  return 0;
}

struct SweepArgs {
  std::string kind, config, oracle = "builtin:voxel0.2", out, plot_data, values;
  std::vector<std::string> scenes, results;
  std::size_t trials = 10;
  std::optional<std::uint64_t> seed;
};

int cmd_sweep(const SweepArgs& a) {
  if (a.scenes.size() != a.results.size()) throw ArgumentError("--scene and --result must be given in pairs");
  const AttackConfig config = read_config(a.config, a.seed);
  std::vector<Scene> scenes;
  for (const auto& s : a.scenes) scenes.push_back(load_scene(s));
  std::vector<SweepCase> cases;
  for (std::size_t i = 0; i < scenes.size(); ++i) cases.push_back({&scenes[i], load_result(a.results[i]).best.points});
  auto oracle = open_oracle(a.oracle);
  Report report;
  if (a.kind == "distance") {
    report = sweep_distance(cases, *oracle, config, parse_list<double>(a.values));
  } else if (a.kind == "angle") {
    report = sweep_angle(cases, *oracle, config, parse_list<double>(a.values));
  } else {
    report = sweep_srs(cases, *oracle, config, parse_list<std::size_t>(a.values), a.trials, config.seed);
  }
  write_text(a.out + ".csv", report.to_csv());
  write_text(a.out + ".json", report.to_json().dump(2) + "\n");
  if (!a.plot_data.empty()) write_text(a.plot_data, report.plot_data().dump(2) + "\n");
  std::cout << report.to_csv();
  return 0;
}

struct DefendArgs {
  std::string in, out;
  std::optional<std::size_t> count;
  std::optional<double> fraction;
  std::uint64_t seed = 0;
};

int cmd_defend(const DefendArgs& a) {
  SrsConfig srs;
  srs.remove_count = a.count;
  srs.remove_fraction = a.fraction;
  srs.seed = a.seed;
  const PointCloud cloud = load_kitti_bin(a.in);
  const PointCloud kept = srs_filter(cloud, srs);
  save_kitti_bin(kept, a.out);
  std::printf("kept %zu of %zu points\n", kept.size(), cloud.size());
  return 0;
}

struct EmitArgs {
  std::vector<std::string> scenes, results;
  double mix = 1.0;
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_emit(const EmitArgs& a) {
  if (a.scenes.size() != a.results.size()) throw ArgumentError("--scene and --result must be given in pairs");
  std::vector<Scene> scenes;
  std::vector<AttackResult> results;
  for (std::size_t i = 0; i < a.scenes.size(); ++i) {
    scenes.push_back(load_scene(a.scenes[i]));
    results.push_back(load_result(a.results[i]));
  }
  const Manifest m = emit_adv_training_set(scenes, results, a.mix, a.out, a.seed);
  std::printf("%zu files written to %s\n", m.entries.size(), a.out.c_str());
  return 0;
}

struct CheckArgs {
  std::string oracle;
  std::vector<std::string> transcripts;
  int timeout_ms = wire::kDefaultTimeoutMs;
};

int cmd_oracle_check(const CheckArgs& a) {
  bool ok = true;
  for (const auto& path : a.transcripts) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open transcript " + path);
    auto peer = wire::PeerConnection::open(a.oracle, a.timeout_ms);
    const auto report = wire::replay_transcript(peer->channel(), in, a.timeout_ms);
    peer->close();
    for (const auto& m : report.mismatches) std::fprintf(stderr, "%s: %s\n", path.c_str(), m.c_str());
    std::printf("%s: %zu exchanges, %s\n", path.c_str(), report.exchanges, report.ok() ? "ok" : "MISMATCH");
    ok = ok && report.ok();
  }
  return ok ? 0 : kExitOracle;
}

struct BenchArgs {
  std::string out;
  std::size_t count = 20;
  std::uint64_t seed = 20240917;
};

int cmd_bench(const BenchArgs& a) {
  const auto scenes = synthetic::make_benchmark(a.count, a.seed);
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%02zu.json", i);
    save_scene(scenes[i], fs::path(a.out) / name);
  }
  std::printf("%zu scenes written to %s (seed %llu)\n", scenes.size(), a.out.c_str(),
              static_cast<unsigned long long>(a.seed));
  return 0;
}

struct BenchmarkArgs {
  std::string config, oracle = "builtin:voxel0.2", out;
  std::size_t count = 20;
  std::uint64_t bench_seed = 20240917;
  std::optional<std::uint64_t> seed;
};

int cmd_benchmark(const BenchmarkArgs& a) {
  const AttackConfig config = read_config(a.config, a.seed);
  const auto scenes = synthetic::make_benchmark(a.count, a.bench_seed);
  auto oracle = open_oracle(a.oracle);
  std::vector<AttackResult> results;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    results.push_back(run_attack(scenes[i], *oracle, config));
    char name[32];
    std::snprintf(name, sizeof name, "scene_%02zu", i);
    write_attack_outputs(results.back(), scenes[i], config, fs::path(a.out) / name);
    std::printf("%s %-10s %s\n", name, scenes[i].label.c_str(), to_string(results.back().best.verdict.kind));
    std::fflush(stdout);
  }
  const Report report = attack_report("n0=" + std::to_string(config.n0), results, config.seed);
  write_text(fs::path(a.out) / "report.csv", report.to_csv());
  write_text(fs::path(a.out) / "report.json", report.to_json().dump(2) + "\n");
  std::cout << report.to_csv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box adversarial point perturbations against LiDAR object detectors"};
  app.require_subcommand(1);

  AttackArgs attack;
  auto* sc_attack = app.add_subcommand("attack", "Search for perturbation points that defeat the detector on one scene");
  sc_attack->add_option("--scene", attack.scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  sc_attack->add_option("--config", attack.config, "Attack config JSON (defaults if omitted)")->check(CLI::ExistingFile);
  sc_attack->add_option("--oracle", attack.oracle, "builtin:<name> | exec:<command> | tcp:<host>:<port>");
  sc_attack->add_option("--out", attack.out, "Output directory")->required();
  sc_attack->add_option("--seed", attack.seed, "Override the config seed");
  sc_attack->add_option("--threads", attack.threads, "Parallel evaluations for thread-safe oracles");

  ScanArgs scan;
  auto* sc_scan = app.add_subcommand("scan", "Simulate a LiDAR scan of a binary STL mesh");
  sc_scan->add_option("--mesh", scan.mesh, "Binary STL")->required()->check(CLI::ExistingFile);
  sc_scan->add_option("--config", scan.scan_config, "Scan config JSON")->check(CLI::ExistingFile);
  sc_scan->add_option("--out", scan.out, "Output .bin")->required();

  SweepArgs sweep;
  auto* sc_sweep = app.add_subcommand("sweep", "Robustness of found perturbations to distance, angle or SRS");
  sc_sweep->add_option("--kind", sweep.kind)->required()->check(CLI::IsMember({"distance", "angle", "srs"}));
  sc_sweep->add_option("--scene", sweep.scenes, "Scene JSON (repeatable)")->required()->check(CLI::ExistingFile);
  sc_sweep->add_option("--result", sweep.results, "Matching result.json (repeatable)")->required()->check(CLI::ExistingFile);
  sc_sweep->add_option("--values", sweep.values, "Comma-separated offsets (m), angles (deg) or removal counts")->required();
  sc_sweep->add_option("--trials", sweep.trials, "Trials per SRS removal count");
  sc_sweep->add_option("--config", sweep.config)->check(CLI::ExistingFile);
  sc_sweep->add_option("--oracle", sweep.oracle);
  sc_sweep->add_option("--out", sweep.out, "Output prefix; writes <prefix>.csv and <prefix>.json")->required();
  sc_sweep->add_option("--plot-data", sweep.plot_data, "Write x/y series JSON here");
  sc_sweep->add_option("--seed", sweep.seed);

  DefendArgs defend;
  auto* sc_defend = app.add_subcommand("defend", "Apply simple random sampling to a .bin cloud");
  sc_defend->add_option("--in", defend.in)->required()->check(CLI::ExistingFile);
  sc_defend->add_option("--out", defend.out)->required();
  auto* opt_count = sc_defend->add_option("--remove-count", defend.count);
  auto* opt_fraction = sc_defend->add_option("--remove-fraction", defend.fraction);
  opt_count->excludes(opt_fraction);
  sc_defend->add_option("--seed", defend.seed);

  EmitArgs emit;
  auto* sc_emit = app.add_subcommand("emit-dataset", "Write clean and adversarial clouds plus a manifest");
  sc_emit->add_option("--scene", emit.scenes)->required()->check(CLI::ExistingFile);
  sc_emit->add_option("--result", emit.results)->required()->check(CLI::ExistingFile);
  sc_emit->add_option("--mix", emit.mix, "Fraction of scenes that also get an adversarial copy");
  sc_emit->add_option("--out", emit.out)->required();
  sc_emit->add_option("--seed", emit.seed);

  CheckArgs check;
  auto* sc_check = app.add_subcommand("oracle-check", "Replay golden protocol transcripts against a peer");
  sc_check->add_option("--oracle", check.oracle, "exec:<command> | tcp:<host>:<port>")->required();
  sc_check->add_option("--transcript", check.transcripts)->required()->check(CLI::ExistingFile);
  sc_check->add_option("--timeout-ms", check.timeout_ms);

  BenchArgs bench;
  auto* sc_bench = app.add_subcommand("make-bench", "Write the synthetic benchmark scenes");
  sc_bench->add_option("--out", bench.out)->required();
  sc_bench->add_option("--count", bench.count);
  sc_bench->add_option("--seed", bench.seed);

  BenchmarkArgs benchmark;
  auto* sc_benchmark = app.add_subcommand("benchmark", "Attack every synthetic benchmark scene and report the ASR");
  sc_benchmark->add_option("--config", benchmark.config)->check(CLI::ExistingFile);
  sc_benchmark->add_option("--oracle", benchmark.oracle);
  sc_benchmark->add_option("--out", benchmark.out)->required();
  sc_benchmark->add_option("--count", benchmark.count);
  sc_benchmark->add_option("--bench-seed", benchmark.bench_seed);
  sc_benchmark->add_option("--seed", benchmark.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (sc_attack->parsed()) return cmd_attack(attack);
    if (sc_scan->parsed()) return cmd_scan(scan);
    if (sc_sweep->parsed()) return cmd_sweep(sweep);
    if (sc_defend->parsed()) return cmd_defend(defend);
    if (sc_emit->parsed()) return cmd_emit(emit);
    if (sc_check->parsed()) return cmd_oracle_check(check);
    if (sc_bench->parsed()) return cmd_bench(bench);
    if (sc_benchmark->parsed()) return cmd_benchmark(benchmark);
  } catch (const AttackAborted& e) {
    std::fprintf(stderr, "error: attack aborted: %s\n", e.what());
    return kExitOracle;
  } catch (const TransportError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitOracle;
  } catch (const ProtocolError& e) {
    std::fprintf(stderr, "error: %s\n  peer sent: %s\n", e.what(), e.raw().c_str());
    return kExitOracle;
  } catch (const BudgetExhaustedError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBudget;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const MalformedFileError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return 1;
}
