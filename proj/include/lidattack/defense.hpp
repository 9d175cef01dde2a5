#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lidattack/gsa.hpp"
#include "lidattack/pointcloud.hpp"
#include "lidattack/scene.hpp"

namespace lidattack {

// Simple random sampling: drop a fixed number or fraction of points.
struct SrsConfig {
  std::optional<std::size_t> remove_count;
  std::optional<double> remove_fraction;
  std::uint64_t seed = 0;

  // Exactly one of count/fraction must be set. A fraction is rounded to the
  // nearest count.
  std::size_t resolve(std::size_t cloud_size) const;
};

PointCloud srs_filter(const PointCloud& cloud, const SrsConfig& config);
// The surviving indices, ascending.
std::vector<std::size_t> srs_keep_indices(std::size_t cloud_size, std::size_t remove_count, std::uint64_t seed);

struct ManifestEntry {
  std::string file;  // relative to the manifest
  std::string label;
  std::string kind;  // "clean" or "adversarial"
  std::size_t points = 0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);
Manifest load_manifest(const std::filesystem::path& path);

// Writes every scene as clean_<i>.bin and, for ceil(mix_fraction * N) scenes
// chosen by a seeded permutation, adv_<i>.bin = scene + scanned perturbation.
// manifest.json lists them all.
Manifest emit_adv_training_set(const std::vector<Scene>& scenes, const std::vector<AttackResult>& results,
                               double mix_fraction, const std::filesystem::path& out_dir, std::uint64_t seed);

}  // namespace lidattack
