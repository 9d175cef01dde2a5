#include "lidattack/toy_detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>

#include <Eigen/Eigenvalues>

#include "lidattack/errors.hpp"
#include "lidattack/synthetic.hpp"

namespace lidattack {

namespace {

struct VoxelKey {
  std::int32_t x, y, z;
  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;
  friend auto operator<=>(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = static_cast<std::uint32_t>(k.x);
    h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(k.y);
    h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(k.z);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

VoxelKey key_of(const Point3& p, double voxel) {
  return {static_cast<std::int32_t>(std::floor(p.x / voxel)), static_cast<std::int32_t>(std::floor(p.y / voxel)),
          static_cast<std::int32_t>(std::floor(p.z / voxel))};
}

std::size_t occupied_voxels(const PointCloud& cloud, double voxel) {
  std::vector<VoxelKey> keys;
  keys.reserve(cloud.size());
  for (const auto& p : cloud) keys.push_back(key_of(p, voxel));
  std::sort(keys.begin(), keys.end());
  return static_cast<std::size_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
}

}  // namespace

std::vector<double> voxel_features(const PointCloud& cluster, double voxel_size) {
  if (cluster.empty()) throw ArgumentError("voxel_features: empty cluster");
  const double n = static_cast<double>(cluster.size());
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  double zmin = std::numeric_limits<double>::infinity();
  double zmax = -zmin;
  for (const auto& p : cluster) {
    mean += Eigen::Vector2d(p.x, p.y);
    zmin = std::min(zmin, p.z);
    zmax = std::max(zmax, p.z);
  }
  mean /= n;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : cluster) {
    const Eigen::Vector2d d = Eigen::Vector2d(p.x, p.y) - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  Eigen::Vector2d major = eig.eigenvectors().col(1);
  if (cov.isZero(0.0)) major = Eigen::Vector2d::UnitX();
  const Eigen::Vector2d minor(-major.y(), major.x());
  double lo_a = std::numeric_limits<double>::infinity(), hi_a = -lo_a;
  double lo_b = lo_a, hi_b = -lo_a;
  for (const auto& p : cluster) {
    const Eigen::Vector2d q(p.x, p.y);
    const double a = q.dot(major);
    const double b = q.dot(minor);
    lo_a = std::min(lo_a, a);
    hi_a = std::max(hi_a, a);
    lo_b = std::min(lo_b, b);
    hi_b = std::max(hi_b, b);
  }
  std::vector<double> f;
  f.reserve(kFeatureSize);
  f.push_back(hi_a - lo_a);
  f.push_back(hi_b - lo_b);
  const double height = zmax - zmin;
  f.push_back(height);
  std::vector<double> hist(kHeightBins, 0.0);
  for (const auto& p : cluster) {
    std::size_t bin = 0;
    if (height > 0) {
      bin = static_cast<std::size_t>((p.z - zmin) / height * static_cast<double>(kHeightBins));
      bin = std::min(bin, kHeightBins - 1);
    }
    hist[bin] += 1.0 / n;
  }
  f.insert(f.end(), hist.begin(), hist.end());
  f.push_back(std::log(n));
  f.push_back(std::log(static_cast<double>(occupied_voxels(cluster, voxel_size))));
  return f;
}

ToyVoxelDetector::ToyVoxelDetector(const std::vector<LabeledTemplate>& templates, ToyDetectorParams params)
    : params_(std::move(params)) {
  if (templates.empty()) throw ArgumentError("toy detector: empty template set");
  if (!(params_.voxel_size > 0) || !(params_.cluster_voxel > 0) || !(params_.tau > 0) || !(params_.threshold > 0 && params_.threshold < 1)) {
    throw ArgumentError("toy detector: invalid parameters");
  }
  info_.name = params_.name;
  info_.default_threshold = params_.threshold;
  for (const auto& t : templates) {
    if (t.cloud.empty()) throw ArgumentError("toy detector: empty template cloud for " + t.label);
    auto it = std::find(info_.classes.begin(), info_.classes.end(), t.label);
    if (it == info_.classes.end()) {
      info_.classes.push_back(t.label);
      it = info_.classes.end() - 1;
    }
    // Templates go through the same clustering as live input; the largest
    // component stands for the class.
    const auto parts = clusters(t.cloud);
    if (parts.empty()) throw ArgumentError("toy detector: template too sparse for " + t.label);
    const auto& largest = *std::max_element(parts.begin(), parts.end(),
                                            [](const auto& a, const auto& b) { return a.size() < b.size(); });
    PointCloud kept;
    for (auto i : largest) kept.push_back(t.cloud[i]);
    template_class_.push_back(static_cast<std::size_t>(it - info_.classes.begin()));
    template_features_.push_back(weighted(voxel_features(kept, params_.voxel_size)));
  }
}

std::vector<double> ToyVoxelDetector::weighted(std::vector<double> f) const {
  for (std::size_t i = 3; i < 3 + kHeightBins; ++i) f[i] *= params_.histogram_weight;
  f[3 + kHeightBins] *= params_.count_weight;
  f[4 + kHeightBins] *= params_.voxel_weight;
  return f;
}

bool ToyVoxelDetector::admitted(const Point3& p) const {
  return p.z > params_.ground_z + params_.ground_clearance &&
         p.x * p.x + p.y * p.y <= params_.max_range * params_.max_range;
}

std::vector<std::vector<std::size_t>> ToyVoxelDetector::clusters(const PointCloud& cloud) const {
  std::vector<std::pair<VoxelKey, std::size_t>> keyed;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (admitted(cloud[i])) keyed.emplace_back(key_of(cloud[i], params_.cluster_voxel), i);
  }
  std::sort(keyed.begin(), keyed.end());

  // voxel id -> [begin, end) into `keyed`
  std::vector<std::pair<std::size_t, std::size_t>> voxels;
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> lookup;
  for (std::size_t i = 0; i < keyed.size();) {
    std::size_t j = i;
    while (j < keyed.size() && keyed[j].first == keyed[i].first) ++j;
    lookup.emplace(keyed[i].first, voxels.size());
    voxels.emplace_back(i, j);
    i = j;
  }

  std::vector<std::vector<std::size_t>> out;
  std::vector<bool> seen(voxels.size(), false);
  std::vector<std::size_t> stack;
  for (std::size_t v = 0; v < voxels.size(); ++v) {
    if (seen[v]) continue;
    std::vector<std::size_t> members;
    seen[v] = true;
    stack.assign(1, v);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      members.push_back(cur);
      const VoxelKey k = keyed[voxels[cur].first].first;
      for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dz = -1; dz <= 1; ++dz) {
            auto it = lookup.find({k.x + dx, k.y + dy, k.z + dz});
            if (it != lookup.end() && !seen[it->second]) {
              seen[it->second] = true;
              stack.push_back(it->second);
            }
          }
        }
      }
    }
    std::vector<std::size_t> indices;
    for (auto m : members) {
      for (std::size_t i = voxels[m].first; i < voxels[m].second; ++i) indices.push_back(keyed[i].second);
    }
    if (indices.size() < params_.min_points) continue;
    std::sort(indices.begin(), indices.end());
    out.push_back(std::move(indices));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

std::vector<double> ToyVoxelDetector::class_scores(const PointCloud& cluster) const {
  const auto f = weighted(voxel_features(cluster, params_.voxel_size));
  const std::size_t nclass = info_.classes.size();
  // log-affinities; background is the last entry
  std::vector<double> logit(nclass + 1, -std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < template_features_.size(); ++t) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) d2 += (f[i] - template_features_[t][i]) * (f[i] - template_features_[t][i]);
    logit[template_class_[t]] = std::max(logit[template_class_[t]], -d2 / params_.tau);
  }
  logit[nclass] = -params_.background_radius * params_.background_radius / params_.tau;
  const double top = *std::max_element(logit.begin(), logit.end());
  double total = 0.0;
  for (double l : logit) total += std::exp(l - top);
  std::vector<double> scores(nclass);
  for (std::size_t c = 0; c < nclass; ++c) scores[c] = std::exp(logit[c] - top) / total;
  return scores;
}

std::vector<Detection> ToyVoxelDetector::do_detect(const PointCloud& cloud) {
  std::vector<Detection> out;
  if (cloud.size() < params_.min_points) return out;
  for (const auto& indices : clusters(cloud)) {
    PointCloud cluster;
    cluster.reserve(indices.size());
    for (auto i : indices) cluster.push_back(cloud[i]);
    const auto scores = class_scores(cluster);
    const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    if (scores[best] < params_.threshold) continue;
    Eigen::Vector3d lo = cluster.front().xyz(), hi = lo;
    for (const auto& p : cluster) {
      lo = lo.cwiseMin(p.xyz());
      hi = hi.cwiseMax(p.xyz());
    }
    Detection d;
    d.label = info_.classes[best];
    d.score = scores[best];
    d.box.center = 0.5 * (lo + hi);
    d.box.half_extents = (0.5 * (hi - lo)).cwiseMax(0.05);
    d.box.yaw = 0.0;
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<std::string> builtin_oracle_names() { return {"voxel0.2", "voxel0.4"}; }

std::unique_ptr<Oracle> make_builtin_oracle(const std::string& name) {
  ToyDetectorParams params;
  if (name == "voxel0.2") {
    params.name = "toy-voxel-0.2";
    params.voxel_size = 0.2;
  } else if (name == "voxel0.4") {
    params.name = "toy-voxel-0.4";
    params.voxel_size = 0.4;
  } else {
    throw ArgumentError("unknown built-in oracle: " + name);
  }
  return std::make_unique<ToyVoxelDetector>(synthetic::builtin_templates(), params);
}

}  // namespace lidattack
