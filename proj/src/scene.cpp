#include "lidattack/scene.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "lidattack/errors.hpp"

namespace lidattack {

namespace {

constexpr std::array<const char*, 3> kLabels = {"Car", "Pedestrian", "Cyclist"};

Eigen::Vector3d read_vec3(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 3) throw ConfigError(std::string("scene: `") + key + "` must be [x,y,z]");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

}  // namespace

PointCloud Scene::merged() const {
  PointCloud out;
  out.reserve(background.size() + target.size());
  out.insert(out.end(), background.begin(), background.end());
  out.insert(out.end(), target.begin(), target.end());
  return out;
}

bool is_known_label(const std::string& label) {
  for (const char* l : kLabels) {
    if (label == l) return true;
  }
  return false;
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scene " + path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  Scene scene;
  try {
    scene.background = load_kitti_bin(base / j.at("background").get<std::string>());
    scene.target = load_kitti_bin(base / j.at("target").get<std::string>());
    scene.label = j.at("label").get<std::string>();
    const auto& box = j.at("gt_box");
    scene.gt_box.center = read_vec3(box, "center");
    scene.gt_box.half_extents = read_vec3(box, "half_extents");
    scene.gt_box.yaw = box.at("yaw").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scene " + path.string() + ": " + e.what());
  }
  if (!is_known_label(scene.label)) throw ConfigError("scene " + path.string() + ": unknown label " + scene.label);
  if ((scene.gt_box.half_extents.array() <= 0.0).any()) {
    throw ConfigError("scene " + path.string() + ": half_extents must be positive");
  }
  if (scene.target.empty()) throw ConfigError("scene " + path.string() + ": empty target cloud");
  return scene;
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  const std::string stem = path.stem().string();
  const auto base = path.parent_path();
  const std::string bg = stem + "_background.bin";
  const std::string tg = stem + "_target.bin";
  save_kitti_bin(scene.background, base / bg);
  save_kitti_bin(scene.target, base / tg);
  const auto& b = scene.gt_box;
  nlohmann::json j = {
      {"background", bg},
      {"target", tg},
      {"label", scene.label},
      {"gt_box",
       {{"center", {b.center.x(), b.center.y(), b.center.z()}},
        {"half_extents", {b.half_extents.x(), b.half_extents.y(), b.half_extents.z()}},
        {"yaw", b.yaw}}},
  };
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace lidattack
