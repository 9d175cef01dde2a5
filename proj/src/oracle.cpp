#include "lidattack/oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "lidattack/errors.hpp"

namespace lidattack {

namespace {

using Polygon = std::vector<Eigen::Vector2d>;

Polygon footprint(const BoundingBox& b) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  const Eigen::Vector2d ax(c * b.half_extents.x(), s * b.half_extents.x());
  const Eigen::Vector2d ay(-s * b.half_extents.y(), c * b.half_extents.y());
  const Eigen::Vector2d ctr = b.center.head<2>();
  // counter-clockwise
  return {ctr + ax + ay, ctr - ax + ay, ctr - ax - ay, ctr + ax - ay};
}

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

// Sutherland–Hodgman against a convex counter-clockwise clip polygon.
Polygon clip(const Polygon& subject, const Polygon& clipper) {
  Polygon out = subject;
  for (std::size_t i = 0; i < clipper.size() && !out.empty(); ++i) {
    const Eigen::Vector2d a = clipper[i];
    const Eigen::Vector2d b = clipper[(i + 1) % clipper.size()];
    auto inside = [&](const Eigen::Vector2d& p) { return cross2(b - a, p - a) >= 0.0; };
    Polygon in = std::move(out);
    out.clear();
    for (std::size_t k = 0; k < in.size(); ++k) {
      const Eigen::Vector2d p = in[k];
      const Eigen::Vector2d q = in[(k + 1) % in.size()];
      const bool pin = inside(p);
      const bool qin = inside(q);
      if (pin) out.push_back(p);
      if (pin != qin) {
        const double dp = cross2(b - a, p - a);
        const double dq = cross2(b - a, q - a);
        out.push_back(p + (q - p) * (dp / (dp - dq)));
      }
    }
  }
  return out;
}

double area(const Polygon& poly) {
  double s = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) s += cross2(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * std::abs(s);
}

}  // namespace

const char* to_string(VerdictCase c) {
  switch (c) {
    case VerdictCase::RecognizedCorrect:
      return "RecognizedCorrect";
    case VerdictCase::Hidden:
      return "Hidden";
    case VerdictCase::Misclassified:
      return "Misclassified";
  }
  return "?";
}

VerdictCase verdict_case_from_string(const std::string& s) {
  if (s == "RecognizedCorrect") return VerdictCase::RecognizedCorrect;
  if (s == "Hidden") return VerdictCase::Hidden;
  if (s == "Misclassified") return VerdictCase::Misclassified;
  throw ArgumentError("unknown verdict case: " + s);
}

double box_iou(const BoundingBox& a, const BoundingBox& b) {
  const double bev = area(clip(footprint(a), footprint(b)));
  const double z_lo = std::max(a.center.z() - a.half_extents.z(), b.center.z() - b.half_extents.z());
  const double z_hi = std::min(a.center.z() + a.half_extents.z(), b.center.z() + b.half_extents.z());
  const double inter = bev * std::max(0.0, z_hi - z_lo);
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

OracleVerdict classify_verdict(const std::vector<Detection>& detections, const Scene& scene, const DetectorInfo& info,
                               double iou_gate) {
  const Detection* match = nullptr;
  for (const auto& d : detections) {
    if (!scene.gt_box.contains(d.box.center)) continue;
    if (iou_gate > 0.0 && box_iou(d.box, scene.gt_box) < iou_gate) continue;
    if (!match || d.score > match->score) match = &d;
  }
  OracleVerdict v;
  if (!match) {
    v.kind = VerdictCase::Hidden;
    v.score_s = 0.0;
    return v;
  }
  v.matched = *match;
  v.score_s = match->score;
  if (match->score < info.default_threshold) {
    v.kind = VerdictCase::Hidden;
  } else if (match->label == scene.label) {
    v.kind = VerdictCase::RecognizedCorrect;
  } else {
    v.kind = VerdictCase::Misclassified;
  }
  return v;
}

void to_json(nlohmann::json& j, const BoundingBox& b) {
  j = nlohmann::json{{"center", {b.center.x(), b.center.y(), b.center.z()}},
                     {"half_extents", {b.half_extents.x(), b.half_extents.y(), b.half_extents.z()}},
                     {"yaw", b.yaw}};
}

void from_json(const nlohmann::json& j, BoundingBox& b) {
  const auto& c = j.at("center");
  const auto& h = j.at("half_extents");
  if (!c.is_array() || c.size() != 3 || !h.is_array() || h.size() != 3) {
    throw nlohmann::json::type_error::create(302, "box center/half_extents must have 3 entries", &j);
  }
  b.center = {c[0].get<double>(), c[1].get<double>(), c[2].get<double>()};
  b.half_extents = {h[0].get<double>(), h[1].get<double>(), h[2].get<double>()};
  b.yaw = j.at("yaw").get<double>();
}

void to_json(nlohmann::json& j, const Detection& d) {
  j = nlohmann::json{{"label", d.label}, {"score", d.score}, {"box", d.box}};
}

void from_json(const nlohmann::json& j, Detection& d) {
  d.label = j.at("label").get<std::string>();
  d.score = j.at("score").get<double>();
  d.box = j.at("box").get<BoundingBox>();
}

void to_json(nlohmann::json& j, const OracleVerdict& v) {
  j = nlohmann::json{{"case", to_string(v.kind)}, {"score_s", v.score_s}};
  j["matched"] = v.matched ? nlohmann::json(*v.matched) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, OracleVerdict& v) {
  v.kind = verdict_case_from_string(j.at("case").get<std::string>());
  v.score_s = j.at("score_s").get<double>();
  if (j.contains("matched") && !j.at("matched").is_null()) {
    v.matched = j.at("matched").get<Detection>();
  } else {
    v.matched.reset();
  }
}

}  // namespace lidattack
