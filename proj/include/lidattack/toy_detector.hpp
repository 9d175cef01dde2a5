#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lidattack/oracle.hpp"

namespace lidattack {

struct LabeledTemplate {
  std::string label;
  PointCloud cloud;
};

struct ToyDetectorParams {
  std::string name = "toy-voxel-0.2";
  double voxel_size = 0.2;
  double threshold = 0.5;
  // Points at or below ground_z + ground_clearance are ignored.
  double ground_z = -1.73;
  double ground_clearance = 0.2;
  double max_range = 40.0;
  // Candidate clusters are connected components on this grid (26-neighborhood).
  double cluster_voxel = 0.6;
  std::size_t min_points = 5;
  // Class affinity is exp(-|f - f_t|^2 / tau); an implicit background
  // hypothesis sits at distance background_radius from every feature.
  double tau = 0.05;
  double background_radius = 0.3;
  double histogram_weight = 1.0;
  double count_weight = 0.05;
  double voxel_weight = 0.05;
};

inline constexpr std::size_t kHeightBins = 8;
inline constexpr std::size_t kFeatureSize = 3 + kHeightBins + 2;

// [length, width, height, 8 height-bin fractions, log count, log occupied voxels].
// Length/width are the extents along the principal horizontal axes.
// Weights are not applied here.
std::vector<double> voxel_features(const PointCloud& cluster, double voxel_size);

class ToyVoxelDetector final : public Oracle {
 public:
  ToyVoxelDetector(const std::vector<LabeledTemplate>& templates, ToyDetectorParams params);

  const DetectorInfo& info() const override { return info_; }
  bool thread_safe() const override { return true; }
  const ToyDetectorParams& params() const { return params_; }

  // Connected components of occupied cluster_voxel cells among the non-ground
  // points, as index lists into `cloud`. Components smaller than min_points are dropped.
  std::vector<std::vector<std::size_t>> clusters(const PointCloud& cloud) const;
  // Per-class normalized scores for one cluster, in info().classes order.
  std::vector<double> class_scores(const PointCloud& cluster) const;

 protected:
  std::vector<Detection> do_detect(const PointCloud& cloud) override;

 private:
  std::vector<double> weighted(std::vector<double> f) const;
  bool admitted(const Point3& p) const;

  ToyDetectorParams params_;
  DetectorInfo info_;
  std::vector<std::size_t> template_class_;
  std::vector<std::vector<double>> template_features_;
};

// `voxel0.2` and `voxel0.4`, both built on the synthetic class templates.
std::unique_ptr<Oracle> make_builtin_oracle(const std::string& name);
std::vector<std::string> builtin_oracle_names();

}  // namespace lidattack
