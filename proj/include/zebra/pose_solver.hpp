#pragma once

// EPnP inside a RANSAC loop.

#include "zebra/camera.hpp"
#include "zebra/matcher.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

namespace zebra {

struct SolverConfig {
  double reproj_threshold_px = 2.0;
  int max_iterations = 150;
  std::size_t min_inliers = 6;
  double confidence = 0.999;
  std::uint64_t seed = 0;

  void validate() const {
    require(reproj_threshold_px > 0, "reprojection threshold must be positive");
    require(max_iterations >= 1, "max_iterations must be >= 1");
    require(confidence > 0 && confidence < 1, "confidence must be in (0, 1)");
  }
};

/// Pixel distance between the projection of `c.point` and `c.pixel`.
/// Points at or behind the camera plane give +inf.
inline double reprojection_error(const PoseSE3& pose, const CameraIntrinsics& cam, const Correspondence& c) {
  const Vec3 pc = pose.apply(c.point);
  if (!(pc.z() > 0)) return std::numeric_limits<double>::infinity();
  return (cam.project(pc) - c.pixel).norm();
}

namespace detail {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

// Least-squares rigid transform mapping `model` onto `camera` points (Kabsch).
inline PoseSE3 kabsch(const std::vector<Vec3>& model, const std::vector<Vec3>& camera) {
  Vec3 cm = Vec3::Zero(), cc = Vec3::Zero();
  for (std::size_t i = 0; i < model.size(); ++i) {
    cm += model[i];
    cc += camera[i];
  }
  cm /= static_cast<double>(model.size());
  cc /= static_cast<double>(model.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < model.size(); ++i) h += (camera[i] - cc) * (model[i] - cm).transpose();
  const Mat3 r = orthonormalize(h);
  return {r, cc - r * cm};
}

struct EpnpSetup {
  std::vector<Vec3> control;  // model frame
  MatX alphas;                // n x nc barycentric coordinates
};

// Control points: centroid plus principal axes scaled by the RMS extent.
// Planar sets use three control points.
inline EpnpSetup choose_control_points(const std::vector<Correspondence>& corrs) {
  const auto n = corrs.size();
  Vec3 c0 = Vec3::Zero();
  for (const auto& c : corrs) c0 += c.point;
  c0 /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  for (const auto& c : corrs) cov += (c.point - c0) * (c.point - c0).transpose();
  cov /= static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const Vec3 lambda = es.eigenvalues();  // ascending
  const Mat3 axes = es.eigenvectors();
  if (!(lambda(2) > 0) || lambda(1) <= 1e-10 * lambda(2))
    throw Error("degenerate correspondence set: 3D points are coincident or collinear");
  const bool planar = lambda(0) <= 1e-10 * lambda(2);
  const int nc = planar ? 3 : 4;

  EpnpSetup s;
  s.control.push_back(c0);
  std::vector<Vec3> dirs;
  std::vector<double> scale;
  for (int k = 2; k >= 3 - (nc - 1); --k) {
    dirs.push_back(axes.col(k));
    scale.push_back(std::sqrt(lambda(k)));
    s.control.push_back(c0 + scale.back() * dirs.back());
  }
  s.alphas.resize(static_cast<Eigen::Index>(n), nc);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = corrs[i].point - c0;
    double rest = 1.0;
    for (int k = 1; k < nc; ++k) {
      const double a = dirs[k - 1].dot(d) / scale[k - 1];
      s.alphas(static_cast<Eigen::Index>(i), k) = a;
      rest -= a;
    }
    s.alphas(static_cast<Eigen::Index>(i), 0) = rest;
  }
  return s;
}

struct EpnpCandidate {
  PoseSE3 pose;
  double error = std::numeric_limits<double>::infinity();
};

// Pose from the control-point coordinates in the camera frame; nullopt when
// the points end up behind the camera.
inline std::optional<EpnpCandidate> pose_from_betas(const std::vector<Correspondence>& corrs,
                                                    const CameraIntrinsics& cam, const EpnpSetup& s,
                                                    const MatX& kernel, const VecX& betas) {
  const auto nc = static_cast<int>(s.control.size());
  VecX flat = kernel * betas;
  std::vector<Vec3> camera(corrs.size()), model(corrs.size());
  double mean_z = 0;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    Vec3 p = Vec3::Zero();
    for (int k = 0; k < nc; ++k) p += s.alphas(static_cast<Eigen::Index>(i), k) * flat.segment<3>(3 * k);
    camera[i] = p;
    model[i] = corrs[i].point;
    mean_z += p.z();
  }
  if (mean_z < 0)
    for (auto& p : camera) p = -p;
  if (std::none_of(camera.begin(), camera.end(), [](const Vec3& p) { return p.z() > 0; })) return std::nullopt;
  EpnpCandidate out;
  out.pose = kabsch(model, camera);
  double sum = 0;
  for (const auto& c : corrs) sum += reprojection_error(out.pose, cam, c);
  out.error = sum / static_cast<double>(corrs.size());
  if (!std::isfinite(out.error)) return std::nullopt;
  return out;
}

// Squared control-point distance constraints as quadratic forms in beta:
// |sum_k beta_k (v_k[i] - v_k[j])|^2 = |c_i - c_j|^2.
struct DistanceSystem {
  std::vector<MatX> forms;  // N x N per control-point pair
  std::vector<double> targets;
};

inline DistanceSystem distance_system(const EpnpSetup& s, const MatX& kernel) {
  const auto nc = static_cast<int>(s.control.size());
  const auto nk = kernel.cols();
  DistanceSystem sys;
  for (int i = 0; i < nc; ++i)
    for (int j = i + 1; j < nc; ++j) {
      MatX diff(3, nk);
      for (Eigen::Index k = 0; k < nk; ++k) diff.col(k) = kernel.col(k).segment<3>(3 * i) - kernel.col(k).segment<3>(3 * j);
      sys.forms.push_back(diff.transpose() * diff);
      sys.targets.push_back((s.control[i] - s.control[j]).squaredNorm());
    }
  return sys;
}

// Linearized betas: solve for the products beta_a*beta_b. When there are more
// products than constraints only beta_1*beta_k are kept.
inline VecX linearized_betas(const DistanceSystem& sys, Eigen::Index nk) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> terms;
  for (Eigen::Index a = 0; a < nk; ++a)
    for (Eigen::Index b = a; b < nk; ++b) terms.emplace_back(a, b);
  const bool full = terms.size() <= sys.forms.size();
  if (!full) {
    terms.clear();
    for (Eigen::Index b = 0; b < nk; ++b) terms.emplace_back(0, b);
  }
  MatX l(static_cast<Eigen::Index>(sys.forms.size()), static_cast<Eigen::Index>(terms.size()));
  VecX rho(static_cast<Eigen::Index>(sys.forms.size()));
  for (std::size_t p = 0; p < sys.forms.size(); ++p) {
    rho(static_cast<Eigen::Index>(p)) = sys.targets[p];
    for (std::size_t q = 0; q < terms.size(); ++q) {
      const auto [a, b] = terms[q];
      l(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) = (a == b ? 1.0 : 2.0) * sys.forms[p](a, b);
    }
  }
  const VecX prod = l.colPivHouseholderQr().solve(rho);
  VecX beta = VecX::Zero(nk);
  double b11 = prod(0);
  double sign = 1.0;
  if (b11 < 0) {
    b11 = -b11;
    sign = -1.0;
  }
  beta(0) = std::sqrt(b11);
  if (beta(0) == 0) return beta;
  if (full) {
    // Magnitudes from the diagonal products, signs from the cross terms with beta_1.
    for (std::size_t q = 0; q < terms.size(); ++q) {
      const auto [a, b] = terms[q];
      if (a == 0 && b > 0) beta(b) = sign * prod(static_cast<Eigen::Index>(q)) / beta(0);
    }
  } else {
    for (Eigen::Index b = 1; b < nk; ++b) beta(b) = sign * prod(b) / beta(0);
  }
  return beta;
}

inline VecX gauss_newton_betas(const DistanceSystem& sys, VecX beta, int iterations = 10) {
  const auto m = static_cast<Eigen::Index>(sys.forms.size());
  for (int it = 0; it < iterations; ++it) {
    MatX j(m, beta.size());
    VecX r(m);
    for (Eigen::Index p = 0; p < m; ++p) {
      const VecX ab = sys.forms[static_cast<std::size_t>(p)] * beta;
      r(p) = beta.dot(ab) - sys.targets[static_cast<std::size_t>(p)];
      j.row(p) = 2.0 * ab.transpose();
    }
    const VecX step = j.colPivHouseholderQr().solve(-r);
    if (!step.allFinite()) break;
    beta += step;
  }
  return beta;
}

}  // namespace detail

/// EPnP closed-form pose from >= 4 correspondences. Throws on degenerate
/// input (too few, collinear or coincident 3D points, no solution in front of
/// the camera).
inline PoseSE3 epnp(const std::vector<Correspondence>& corrs, const CameraIntrinsics& cam) {
  using detail::MatX;
  using detail::VecX;
  require(corrs.size() >= 4, "EPnP needs at least 4 correspondences");
  cam.validate();
  const auto s = detail::choose_control_points(corrs);
  const auto nc = static_cast<Eigen::Index>(s.control.size());

  // Projection constraints in normalized image coordinates.
  MatX mtm = MatX::Zero(3 * nc, 3 * nc);
  Eigen::Matrix<double, 2, Eigen::Dynamic> rows(2, 3 * nc);
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const double un = (corrs[i].pixel.x() - cam.cx) / cam.fx;
    const double vn = (corrs[i].pixel.y() - cam.cy) / cam.fy;
    rows.setZero();
    for (Eigen::Index k = 0; k < nc; ++k) {
      const double a = s.alphas(static_cast<Eigen::Index>(i), k);
      rows(0, 3 * k) = a;
      rows(0, 3 * k + 2) = -a * un;
      rows(1, 3 * k + 1) = a;
      rows(1, 3 * k + 2) = -a * vn;
    }
    mtm.noalias() += rows.transpose() * rows;
  }
  Eigen::SelfAdjointEigenSolver<MatX> es(mtm);
  const MatX& vecs = es.eigenvectors();  // ascending eigenvalues

  // Gauss-Newton starts: the linearized betas under every sign pattern of
  // beta_2..beta_N, and the previous kernel size's solution padded with zero.
  std::optional<detail::EpnpCandidate> best;
  VecX previous;
  const Eigen::Index max_kernel = std::min<Eigen::Index>(4, 3 * nc);
  for (Eigen::Index nk = 1; nk <= max_kernel; ++nk) {
    const MatX kernel = vecs.leftCols(nk);
    const auto sys = detail::distance_system(s, kernel);
    const VecX lin = detail::linearized_betas(sys, nk);
    std::vector<VecX> starts;
    for (unsigned mask = 0; mask < (1u << (nk - 1)); ++mask) {
      VecX b = lin;
      for (Eigen::Index k = 1; k < nk; ++k)
        if (mask >> (k - 1) & 1u) b(k) = -b(k);
      starts.push_back(b);
    }
    if (previous.size() > 0) {
      starts.push_back(VecX::Zero(nk));
      starts.back().head(previous.size()) = previous;
    }
    for (const auto& start : starts) {
      if (!start.allFinite()) continue;
      const VecX beta = detail::gauss_newton_betas(sys, start);
      if (!beta.allFinite()) continue;
      auto cand = detail::pose_from_betas(corrs, cam, s, kernel, beta);
      if (cand && (!best || cand->error < best->error)) {
        best = cand;
        previous = beta;
      }
    }
  }
  if (!best) throw Error("EPnP found no solution in front of the camera");
  return best->pose;
}

struct RansacResult {
  bool success = false;
  PoseSE3 pose;
  std::vector<std::uint8_t> inliers;  // one flag per correspondence
  std::size_t inlier_count = 0;
  int iterations_used = 0;
};

namespace detail {

inline std::size_t count_inliers(const PoseSE3& pose, const CameraIntrinsics& cam,
                                 const std::vector<Correspondence>& corrs, double threshold,
                                 std::vector<std::uint8_t>* mask = nullptr) {
  std::size_t n = 0;
  if (mask) mask->assign(corrs.size(), 0);
  for (std::size_t i = 0; i < corrs.size(); ++i)
    if (reprojection_error(pose, cam, corrs[i]) <= threshold) {
      ++n;
      if (mask) (*mask)[i] = 1;
    }
  return n;
}

inline int required_iterations(std::size_t inliers, std::size_t total, double confidence, int cap) {
  const double w = static_cast<double>(inliers) / static_cast<double>(total);
  const double wn = std::pow(w, 4);
  if (wn >= 1.0) return 1;
  if (wn <= 0.0) return cap;
  const double k = std::log(1.0 - confidence) / std::log(1.0 - wn);
  return static_cast<int>(std::min<double>(cap, std::ceil(k)));
}

}  // namespace detail

/// RANSAC over minimal 4-point EPnP hypotheses, then an EPnP refit on the
/// best inlier set. The refit pose is returned with its own inlier mask; the
/// winning hypothesis is kept only if the refit is degenerate or falls below
/// `min_inliers`. `success` is false when no hypothesis reaches `min_inliers`.
inline RansacResult ransac_pnp(const std::vector<Correspondence>& corrs, const CameraIntrinsics& cam,
                               const SolverConfig& cfg = {}) {
  cfg.validate();
  require(corrs.size() >= 4, "RANSAC/PnP needs at least 4 correspondences");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> pool(corrs.size());
  std::vector<Correspondence> sample(4);

  RansacResult out;
  std::optional<PoseSE3> best;
  std::size_t best_count = 0;
  int needed = cfg.max_iterations;
  int it = 0;
  while (it < needed) {
    ++it;
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t k = 0; k < 4; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng)]);
      sample[k] = corrs[pool[k]];
    }
    PoseSE3 hyp;
    try {
      hyp = epnp(sample, cam);
    } catch (const Error&) {
      continue;
    }
    const auto n = detail::count_inliers(hyp, cam, corrs, cfg.reproj_threshold_px);
    if (n > best_count) {
      best_count = n;
      best = hyp;
      needed = std::min(needed, detail::required_iterations(n, corrs.size(), cfg.confidence, cfg.max_iterations));
    }
  }
  out.iterations_used = it;
  if (!best || best_count < cfg.min_inliers) return out;

  std::vector<std::uint8_t> mask;
  detail::count_inliers(*best, cam, corrs, cfg.reproj_threshold_px, &mask);
  std::vector<Correspondence> inlier_set;
  for (std::size_t i = 0; i < corrs.size(); ++i)
    if (mask[i]) inlier_set.push_back(corrs[i]);
  out.pose = *best;
  out.inliers = mask;
  out.inlier_count = best_count;
  try {
    const PoseSE3 refit = epnp(inlier_set, cam);
    std::vector<std::uint8_t> refit_mask;
    const auto n = detail::count_inliers(refit, cam, corrs, cfg.reproj_threshold_px, &refit_mask);
    if (n >= cfg.min_inliers) {
      out.pose = refit;
      out.inliers = std::move(refit_mask);
      out.inlier_count = n;
    }
  } catch (const Error&) {
    // degenerate inlier set: keep the hypothesis
  }
  out.success = true;
  return out;
}

// ---------------------------------------------------------------------------
// Pose JSON: {"R": [9, row-major], "t": [3], "inlier_count", "iterations_used"}

inline nlohmann::ordered_json pose_to_json(const PoseSE3& pose) {
  nlohmann::ordered_json j;
  j["R"] = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) j["R"].push_back(pose.R(r, c));
  j["t"] = {pose.t.x(), pose.t.y(), pose.t.z()};
  return j;
}

inline nlohmann::ordered_json pose_to_json(const RansacResult& res) {
  auto j = pose_to_json(res.pose);
  j["inlier_count"] = res.inlier_count;
  j["iterations_used"] = res.iterations_used;
  j["success"] = res.success;
  return j;
}

inline PoseSE3 pose_from_json(const nlohmann::json& j) {
  require(j.contains("R") && j["R"].size() == 9 && j.contains("t") && j["t"].size() == 3,
          "pose JSON needs R[9] and t[3]");
  PoseSE3 p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.R(r, c) = j["R"][static_cast<std::size_t>(3 * r + c)].get<double>();
  for (int k = 0; k < 3; ++k) p.t(k) = j["t"][static_cast<std::size_t>(k)].get<double>();
  return p;
}

}  // namespace zebra
