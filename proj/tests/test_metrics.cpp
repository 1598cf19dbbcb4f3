#include "zebra/metrics.hpp"
#include "zebra/primitives.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace zebra;
using oracle::brute_add;
using oracle::brute_adds;

namespace {

std::vector<Vec3> cloud(std::mt19937_64& rng, int n, double half = 50) {
  std::uniform_real_distribution<double> u(-half, half);
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  return pts;
}

PoseSE3 random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-100, 100);
  return {random_rotation(rng), Vec3(u(rng), u(rng), 500 + u(rng))};
}

PoseSE3 perturb(const PoseSE3& p, std::mt19937_64& rng, double angle, double shift) {
  std::normal_distribution<double> n(0, 1);
  const Mat3 d = rotation_from_axis_angle(Vec3(n(rng), n(rng), n(rng)), angle);
  return {d * p.R, p.t + shift * Vec3(n(rng), n(rng), n(rng))};
}

EvalConfig config(double diameter) {
  EvalConfig c;
  c.diameter_mm = diameter;
  return c;
}

}  // namespace

TEST(AddError, RigidShiftAndIdentity) {
  std::mt19937_64 rng(1);
  const auto pts = cloud(rng, 100);
  const auto gt = random_pose(rng);
  EXPECT_EQ(add_error(gt, gt, pts), 0.0);
  PoseSE3 shifted = gt;
  shifted.t += Vec3(3, 4, 0);
  EXPECT_NEAR(add_error(shifted, gt, pts), 5.0, 1e-12);
  EXPECT_THROW(add_error(gt, gt, std::vector<Vec3>{}), Error);
}

TEST(AddError, MatchesBruteForceOn50Cases) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 50; ++k) {
    const auto pts = cloud(rng, 20 + k * 7);
    const auto gt = random_pose(rng);
    const auto pred = perturb(gt, rng, 0.05, 2.0);
    EXPECT_NEAR(add_error(pred, gt, pts), brute_add(pred, gt, pts), 1e-9);
  }
}

TEST(AddError, LeftCompositionInvariance) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    const auto pts = cloud(rng, 200);
    const auto gt = random_pose(rng);
    const auto pred = perturb(gt, rng, 0.1, 5.0);
    const auto g = random_pose(rng);
    EXPECT_NEAR(add_error(g * pred, g * gt, pts), add_error(pred, gt, pts), 1e-9);
  }
}

TEST(AddsError, MatchesBruteForceAndBoundedByAdd) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 50; ++k) {
    const auto pts = cloud(rng, 30 + k * 5);
    const auto gt = random_pose(rng);
    const auto pred = perturb(gt, rng, 0.2 * (k % 5), 3.0 * (k % 3));
    const double adds = adds_error(pred, gt, pts);
    EXPECT_NEAR(adds, brute_adds(pred, gt, pts), 1e-9);
    EXPECT_LE(adds, add_error(pred, gt, pts));
    EXPECT_EQ(adds_error(gt, gt, pts), 0.0);
  }
}

TEST(AddsError, SymmetricRingWithinChordBound) {
  const double r = 40.0;
  std::vector<Vec3> ring;
  for (int k = 0; k < 360; ++k) {
    const double a = k * std::numbers::pi / 180.0;
    ring.emplace_back(r * std::cos(a), r * std::sin(a), 0.0);
  }
  const PoseSE3 gt{rotation_from_axis_angle(Vec3(1, 1, 0), 0.3), Vec3(0, 0, 400)};
  const double chord = r * 0.01745;
  for (const double deg : {1.0, 17.5, 90.0, 133.3}) {
    const PoseSE3 sym{rotation_from_axis_angle(Vec3(0, 0, 1), deg * std::numbers::pi / 180.0), Vec3::Zero()};
    const auto pred = gt * sym;
    EXPECT_LE(adds_error(pred, gt, ring), chord) << deg;
    EXPECT_GT(add_error(pred, gt, ring), adds_error(pred, gt, ring));
  }
}

TEST(AddsError, SubsamplingCapIsSeededAndUniform) {
  std::mt19937_64 rng(5);
  const auto pts = cloud(rng, 500);
  const auto a = AddsEvaluator::subsample(pts, 100, 9);
  const auto b = AddsEvaluator::subsample(pts, 100, 9);
  EXPECT_EQ(a.size(), 100u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, AddsEvaluator::subsample(pts, 100, 10));
  EXPECT_EQ(AddsEvaluator::subsample(pts, 1000, 9).size(), 500u);
  // The capped evaluator equals the brute force on the retained subset.
  const auto gt = random_pose(rng);
  const auto pred = perturb(gt, rng, 0.3, 4.0);
  EXPECT_NEAR(adds_error(pred, gt, pts, 100, 9), brute_adds(pred, gt, a), 1e-9);
}

TEST(Recall, ThresholdStraddleAndBruteForce) {
  const auto cfg = config(200.0);
  EXPECT_EQ(recall_add(std::vector<double>(7, 0.0), cfg), 1.0);
  EXPECT_EQ(recall_add(std::vector<double>{0.05 * 200, 0.15 * 200}, cfg), 0.5);
  EXPECT_EQ(recall_add(std::vector<double>{20.0}, cfg), 0.0);  // strict
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 60);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> e(1 + rng() % 50);
    for (auto& x : e) x = u(rng);
    int hits = 0;
    for (const double x : e) hits += x < 20.0;
    EXPECT_DOUBLE_EQ(recall_add(e, cfg), static_cast<double>(hits) / e.size());
  }
}

TEST(Auc, TabulatedCases) {
  const auto cfg = config(100.0);
  for (const auto mode : {AucMode::AllPoints, AucMode::ElevenPoint}) {
    EXPECT_EQ(auc_add(std::vector<double>(5, 0.0), cfg, mode), 1.0);
    EXPECT_EQ(auc_add(std::vector<double>{100.5, 300}, cfg, mode), 0.0);
  }
  EXPECT_DOUBLE_EQ(auc_add(std::vector<double>{50.0}, cfg, AucMode::AllPoints), 0.5);
  EXPECT_DOUBLE_EQ(auc_add(std::vector<double>{50.0}, cfg, AucMode::ElevenPoint), 5.0 / 11.0);
  EXPECT_EQ(auc_add(std::vector<double>{100.0}, cfg, AucMode::ElevenPoint), 0.0);
}

TEST(Auc, AllPointsMatchesNumericIntegration) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 150);
  const auto cfg = config(100.0);
  for (int k = 0; k < 20; ++k) {
    std::vector<double> e(1 + rng() % 10);
    for (auto& x : e) x = u(rng);
    // Midpoint rule on the step curve with 10^5 cells.
    const int cells = 100000;
    double area = 0;
    for (int c = 0; c < cells; ++c) {
      const double tau = (c + 0.5) * 100.0 / cells;
      area += static_cast<double>(std::count_if(e.begin(), e.end(), [tau](double x) { return x < tau; })) / e.size();
    }
    EXPECT_NEAR(auc_add(e, cfg, AucMode::AllPoints), area / cells, 2.0 / cells);
  }
}

TEST(Auc, MonotoneAndModesAgreeWithinOneEleventh) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 130);
  const auto cfg = config(100.0);
  for (int k = 0; k < 2000; ++k) {
    std::vector<double> e(1 + rng() % 40);
    for (auto& x : e) x = (rng() % 7 == 0) ? 10.0 * static_cast<double>(rng() % 12) : u(rng);
    const double a = auc_add(e, cfg, AucMode::AllPoints);
    const double b = auc_add(e, cfg, AucMode::ElevenPoint);
    EXPECT_LE(std::abs(a - b), 1.0 / 11.0 + 1e-12);
    auto more = e;
    more.push_back(0.0);
    EXPECT_GE(auc_add(more, cfg, AucMode::AllPoints), a);
    EXPECT_GE(auc_add(more, cfg, AucMode::ElevenPoint), b);
  }
}

TEST(Diameter, AnalyticAndBruteForce) {
  const auto cube = primitives::box(1, 1, 1);
  EXPECT_DOUBLE_EQ(diameter(cube.vertices), std::sqrt(3.0));
  EXPECT_EQ(diameter(std::vector<Vec3>{{0, 0, 0}, {7, 0, 0}}), 7.0);
  EXPECT_THROW(diameter(std::vector<Vec3>{{1, 2, 3}}), Error);
  std::mt19937_64 rng(9);
  for (int k = 0; k < 30; ++k) {
    auto pts = cloud(rng, 200, 10 + k);
    if (k % 3 == 0)
      for (auto& p : pts) p.z() *= 0.1;  // flattened clouds
    double best = 0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, (pts[i] - pts[j]).norm());
    EXPECT_EQ(diameter(pts), best);
  }
}

TEST(EvalConfig, Validation) {
  EvalConfig c;
  EXPECT_THROW(c.validate(), Error);
  c.diameter_mm = 10;
  EXPECT_NO_THROW(c.validate());
  c.threshold_fraction = 1.5;
  EXPECT_THROW(recall_add(std::vector<double>{1.0}, c), Error);
}

TEST(Report, IdenticalPosesGivePerfectScores) {
  std::mt19937_64 rng(10);
  const auto pts = cloud(rng, 50);
  ObjectEvaluation obj{"cloud", config(diameter(pts)), {}};
  for (int k = 0; k < 10; ++k) {
    const auto p = random_pose(rng);
    obj.errors.push_back(add_error(p, p, pts));
  }
  const auto j = evaluation_report({obj});
  EXPECT_EQ(j["objects"][0]["n"], 10);
  EXPECT_EQ(j["objects"][0]["recall_add"], 1.0);
  EXPECT_EQ(j["objects"][0]["auc_add_allpoints"], 1.0);
  EXPECT_EQ(j["objects"][0]["auc_add_11pt"], 1.0);
  EXPECT_EQ(j["mean"]["mean_error_mm"], 0.0);
}
