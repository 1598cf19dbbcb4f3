#pragma once

// Pose accuracy: ADD, ADD-S, recall at a diameter fraction, AUC.

#include "zebra/camera.hpp"
#include "zebra/geometry.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace zebra {

enum class AucMode { AllPoints, ElevenPoint };

struct EvalConfig {
  double diameter_mm = 0;
  double threshold_fraction = 0.10;
  double auc_max_mm = 100.0;

  void validate() const {
    require(diameter_mm > 0, "diameter must be positive");
    require(threshold_fraction > 0 && threshold_fraction <= 1, "threshold fraction must be in (0, 1]");
    require(auc_max_mm > 0, "AUC max threshold must be positive");
  }

  double threshold_mm() const { return threshold_fraction * diameter_mm; }
};

/// Mean distance between corresponding model points under both poses.
inline double add_error(const PoseSE3& pred, const PoseSE3& gt, std::span<const Vec3> points) {
  require(!points.empty(), "ADD needs a non-empty point set");
  double sum = 0;
  for (const auto& x : points) sum += (pred.apply(x) - gt.apply(x)).norm();
  return sum / static_cast<double>(points.size());
}

/// ADD-S over a fixed (possibly subsampled) point set. Distances are taken in
/// the camera frame so every nearest-neighbour term is bounded by the ADD
/// term of the same point.
class AddsEvaluator {
public:
  static constexpr std::size_t kDefaultCap = 10000;

  /// Point sets larger than `cap` are reduced to `cap` points by uniform
  /// index subsampling with `seed`.
  explicit AddsEvaluator(std::span<const Vec3> points, std::size_t cap = kDefaultCap, std::uint64_t seed = 0)
      : points_(subsample(points, cap, seed)) {
    require(!points_.empty(), "ADD-S needs a non-empty point set");
  }

  /// mean_x min_y |pred(x) - gt(y)|.
  double operator()(const PoseSE3& pred, const PoseSE3& gt) const {
    std::vector<Vec3> target(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) target[i] = gt.apply(points_[i]);
    const KdTree tree(target);
    double sum = 0;
    for (const auto& x : points_) sum += tree.nearest(pred.apply(x));
    return sum / static_cast<double>(points_.size());
  }

  const std::vector<Vec3>& points() const { return points_; }

  static std::vector<Vec3> subsample(std::span<const Vec3> points, std::size_t cap, std::uint64_t seed) {
    require(cap >= 1, "subsample cap must be >= 1");
    if (points.size() <= cap) return {points.begin(), points.end()};
    std::vector<std::size_t> idx(points.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<std::size_t> keep;
    std::mt19937_64 rng(seed);
    std::sample(idx.begin(), idx.end(), std::back_inserter(keep), cap, rng);
    std::vector<Vec3> out;
    out.reserve(cap);
    for (const auto i : keep) out.push_back(points[i]);
    return out;
  }

private:
  std::vector<Vec3> points_;
};

inline double adds_error(const PoseSE3& pred, const PoseSE3& gt, std::span<const Vec3> points,
                         std::size_t cap = AddsEvaluator::kDefaultCap, std::uint64_t seed = 0) {
  return AddsEvaluator(points, cap, seed)(pred, gt);
}

/// Fraction of errors strictly below threshold_fraction * diameter.
inline double recall_add(std::span<const double> errors, const EvalConfig& cfg) {
  cfg.validate();
  if (errors.empty()) return 0.0;
  const double tau = cfg.threshold_mm();
  const auto hits = std::count_if(errors.begin(), errors.end(), [tau](double e) { return e < tau; });
  return static_cast<double>(hits) / static_cast<double>(errors.size());
}

/// Area under accuracy(tau) = fraction of errors < tau, tau in [0, max],
/// normalized by max. The 11-point mode averages accuracy at tau = 0, max/10,
/// ..., max; at tau = 0 an error counts when it is exactly 0.
inline double auc_add(std::span<const double> errors, const EvalConfig& cfg, AucMode mode) {
  require(cfg.auc_max_mm > 0, "AUC max threshold must be positive");
  if (errors.empty()) return 0.0;
  const double t = cfg.auc_max_mm;
  const auto n = static_cast<double>(errors.size());
  double sum = 0;
  if (mode == AucMode::AllPoints) {
    for (const double e : errors) sum += std::max(0.0, t - e) / t;
    return sum / n;
  }
  for (int k = 0; k <= 10; ++k) {
    const double tau = t * k / 10.0;
    const auto hits = std::count_if(errors.begin(), errors.end(),
                                    [tau, k](double e) { return k == 0 ? e <= 0.0 : e < tau; });
    sum += static_cast<double>(hits) / n;
  }
  return sum / 11.0;
}

inline double diameter(std::span<const Vec3> points) { return exact_diameter(points); }

// ---------------------------------------------------------------------------
// Evaluation report

struct ObjectEvaluation {
  std::string name;
  EvalConfig config;
  std::vector<double> errors;  // mm

  double mean_error() const {
    if (errors.empty()) return 0.0;
    double s = 0;
    for (const double e : errors) s += e;
    return s / static_cast<double>(errors.size());
  }
};

inline nlohmann::ordered_json object_report(const ObjectEvaluation& obj) {
  nlohmann::ordered_json j;
  j["name"] = obj.name;
  j["n"] = obj.errors.size();
  j["diameter_mm"] = obj.config.diameter_mm;
  j["recall_add"] = recall_add(obj.errors, obj.config);
  j["auc_add_allpoints"] = auc_add(obj.errors, obj.config, AucMode::AllPoints);
  j["auc_add_11pt"] = auc_add(obj.errors, obj.config, AucMode::ElevenPoint);
  j["mean_error_mm"] = obj.mean_error();
  return j;
}

/// Per-object metrics plus their unweighted means.
inline nlohmann::ordered_json evaluation_report(const std::vector<ObjectEvaluation>& objects) {
  nlohmann::ordered_json j;
  j["objects"] = nlohmann::ordered_json::array();
  double recall = 0, all_points = 0, eleven = 0, mean = 0;
  for (const auto& obj : objects) {
    auto o = object_report(obj);
    recall += o["recall_add"].get<double>();
    all_points += o["auc_add_allpoints"].get<double>();
    eleven += o["auc_add_11pt"].get<double>();
    mean += o["mean_error_mm"].get<double>();
    j["objects"].push_back(std::move(o));
  }
  const double n = objects.empty() ? 1.0 : static_cast<double>(objects.size());
  j["mean"] = {{"recall_add", recall / n},
               {"auc_add_allpoints", all_points / n},
               {"auc_add_11pt", eleven / n},
               {"mean_error_mm", mean / n}};
  return j;
}

}  // namespace zebra
