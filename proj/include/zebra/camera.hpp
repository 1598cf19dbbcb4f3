#pragma once

#include "zebra/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace zebra {

/// Pinhole intrinsics in pixels. Pixel (u, v) covers [u, u+1) x [v, v+1).
struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;

  void validate() const {
    require(fx > 0 && fy > 0, "focal lengths must be positive");
    require(width >= 1 && height >= 1, "image size must be positive");
  }

  /// Projects a camera-frame point; z must be positive.
  Vec2 project(const Vec3& p) const { return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy}; }
};

/// Rigid transform x_cam = R * x_model + t (millimeters).
struct PoseSE3 {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return R * x + t; }

  bool is_valid(double tol = 1e-9) const {
    return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(R.determinant() - 1.0) <= tol;
  }

  /// (this * other)(x) = this(other(x)).
  PoseSE3 operator*(const PoseSE3& other) const { return {R * other.R, R * other.t + t}; }

  PoseSE3 inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
};

/// Nearest rotation matrix in the Frobenius sense (SVD projection onto SO(3)).
inline Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0) u.col(2) *= -1;
  return u * v.transpose();
}

inline Mat3 rotation_from_axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

/// Angle of the relative rotation Ra^T Rb, in radians.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  // acos loses precision near 0; use the skew part there.
  const Mat3 d = a.transpose() * b;
  const Vec3 w(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
  return std::atan2(0.5 * w.norm(), c);
}

/// Uniform rotation over SO(3) from a normalized Gaussian quaternion.
template <typename Rng>
Mat3 random_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

}  // namespace zebra
