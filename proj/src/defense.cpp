#include "lidattack/defense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "lidattack/errors.hpp"

namespace lidattack {

std::size_t SrsConfig::resolve(std::size_t cloud_size) const {
  if (remove_count.has_value() == remove_fraction.has_value()) {
    throw ArgumentError("SRS needs exactly one of remove_count or remove_fraction");
  }
  std::size_t k;
  if (remove_count) {
    k = *remove_count;
  } else {
    const double f = *remove_fraction;
    if (!(f >= 0.0 && f < 1.0)) throw ArgumentError("SRS remove_fraction must lie in [0, 1)");
    k = static_cast<std::size_t>(std::llround(f * static_cast<double>(cloud_size)));
  }
  if (k > 0 && k >= cloud_size) {
    throw ArgumentError("SRS cannot remove " + std::to_string(k) + " of " + std::to_string(cloud_size) + " points");
  }
  return k;
}

std::vector<std::size_t> srs_keep_indices(std::size_t cloud_size, std::size_t remove_count, std::uint64_t seed) {
  if (remove_count > 0 && remove_count >= cloud_size) throw ArgumentError("SRS remove_count must be below the cloud size");
  std::vector<std::size_t> idx(cloud_size);
  std::iota(idx.begin(), idx.end(), 0);
  if (remove_count == 0) return idx;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < remove_count; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, cloud_size - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  std::vector<std::size_t> keep(idx.begin() + static_cast<std::ptrdiff_t>(remove_count), idx.end());
  std::sort(keep.begin(), keep.end());
  return keep;
}

PointCloud srs_filter(const PointCloud& cloud, const SrsConfig& config) {
  const std::size_t k = config.resolve(cloud.size());
  PointCloud out;
  out.reserve(cloud.size() - k);
  for (auto i : srs_keep_indices(cloud.size(), k, config.seed)) out.push_back(cloud[i]);
  return out;
}

void to_json(nlohmann::json& j, const Manifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"file", e.file}, {"label", e.label}, {"kind", e.kind}, {"points", e.points}});
  }
  j = nlohmann::json{{"entries", entries}};
}

void from_json(const nlohmann::json& j, Manifest& m) {
  m.entries.clear();
  try {
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry{e.at("file").get<std::string>(), e.at("label").get<std::string>(),
                          e.at("kind").get<std::string>(), e.at("points").get<std::size_t>()};
      if (entry.kind != "clean" && entry.kind != "adversarial") throw ConfigError("manifest kind must be clean or adversarial");
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  try {
    return nlohmann::json::parse(in).get<Manifest>();
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
}

Manifest emit_adv_training_set(const std::vector<Scene>& scenes, const std::vector<AttackResult>& results,
                               double mix_fraction, const std::filesystem::path& out_dir, std::uint64_t seed) {
  if (scenes.size() != results.size()) throw ArgumentError("emit dataset: scene and result counts differ");
  if (!(mix_fraction >= 0.0 && mix_fraction <= 1.0)) throw ArgumentError("emit dataset: mix_fraction must lie in [0, 1]");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const std::size_t n = scenes.size();
  const auto n_adv = static_cast<std::size_t>(std::ceil(mix_fraction * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> adversarial(n, false);
  for (std::size_t i = 0; i < n_adv; ++i) adversarial[order[i]] = true;

  Manifest manifest;
  for (std::size_t i = 0; i < n; ++i) {
    const PointCloud clean = scenes[i].merged();
    const std::string clean_name = "clean_" + std::to_string(i) + ".bin";
    save_kitti_bin(clean, out_dir / clean_name);
    manifest.entries.push_back({clean_name, scenes[i].label, "clean", clean.size()});
    if (!adversarial[i]) continue;
    PointCloud adv = clean;
    const auto& scanned = results[i].best.scanned;
    adv.insert(adv.end(), scanned.begin(), scanned.end());
    const std::string adv_name = "adv_" + std::to_string(i) + ".bin";
    save_kitti_bin(adv, out_dir / adv_name);
    manifest.entries.push_back({adv_name, scenes[i].label, "adversarial", adv.size()});
  }
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (out_dir / "manifest.json").string());
  out << nlohmann::json(manifest).dump(2) << '\n';
  if (!out) throw IoError("failed writing " + (out_dir / "manifest.json").string());
  return manifest;
}

}  // namespace lidattack
