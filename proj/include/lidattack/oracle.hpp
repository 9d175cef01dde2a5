#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidattack/pointcloud.hpp"
#include "lidattack/scene.hpp"

namespace lidattack {

struct Detection {
  std::string label;
  double score = 0.0;
  BoundingBox box;
};

struct DetectorInfo {
  std::string name;
  double default_threshold = 0.5;
  std::vector<std::string> classes;
};

enum class VerdictCase { RecognizedCorrect, Hidden, Misclassified };

const char* to_string(VerdictCase c);
VerdictCase verdict_case_from_string(const std::string& s);

struct OracleVerdict {
  VerdictCase kind = VerdictCase::Hidden;
  std::optional<Detection> matched;
  double score_s = 0.0;  // the S that enters the fitness
};

// Black-box detector. Every detect() call is counted.
class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual const DetectorInfo& info() const = 0;
  // True when detect() may be called concurrently.
  virtual bool thread_safe() const { return false; }

  std::vector<Detection> detect(const PointCloud& cloud) {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return do_detect(cloud);
  }
  std::uint64_t calls() const { return calls_.load(std::memory_order_relaxed); }

 protected:
  virtual std::vector<Detection> do_detect(const PointCloud& cloud) = 0;

 private:
  std::atomic<std::uint64_t> calls_{0};
};

// 3D IoU of two yaw-rotated boxes (bird's-eye polygon overlap times Z overlap).
double box_iou(const BoundingBox& a, const BoundingBox& b);

// A detection matches when its center lies inside the ground-truth box (and,
// if iou_gate > 0, its IoU with the box reaches the gate). Highest score wins;
// ties keep the earlier detection.
OracleVerdict classify_verdict(const std::vector<Detection>& detections, const Scene& scene, const DetectorInfo& info,
                               double iou_gate = 0.0);

inline bool attack_success(const OracleVerdict& v) { return v.kind != VerdictCase::RecognizedCorrect; }

void to_json(nlohmann::json& j, const BoundingBox& b);
void from_json(const nlohmann::json& j, BoundingBox& b);
void to_json(nlohmann::json& j, const Detection& d);
void from_json(const nlohmann::json& j, Detection& d);
void to_json(nlohmann::json& j, const OracleVerdict& v);
void from_json(const nlohmann::json& j, OracleVerdict& v);

}  // namespace lidattack
