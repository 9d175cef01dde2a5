#pragma once

#include <filesystem>
#include <string>

#include "lidattack/pointcloud.hpp"

namespace lidattack {

// One attack instance. The detector sees background followed by target.
struct Scene {
  PointCloud background;
  PointCloud target;
  std::string label;
  BoundingBox gt_box;

  PointCloud merged() const;
};

bool is_known_label(const std::string& label);

// Scene file: JSON with `background`, `target` (paths to .bin, relative to the
// scene file), `label` and `gt_box` {center, half_extents, yaw}.
Scene load_scene(const std::filesystem::path& path);
// Writes <stem>_background.bin and <stem>_target.bin next to `path`.
void save_scene(const Scene& scene, const std::filesystem::path& path);

}  // namespace lidattack
