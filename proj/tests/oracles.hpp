#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary: 50-digit arithmetic for the losses, O(n*m) scans for
// the pose metrics.

#include "zebra/camera.hpp"

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

using Big = boost::multiprecision::cpp_dec_float_50;
using zebra::PoseSE3;
using zebra::Vec3;

inline double big_bce(const std::vector<double>& b, const std::vector<double>& p, const std::vector<double>& w) {
  Big sum = 0;
  for (std::size_t j = 0; j < b.size(); ++j) {
    const Big q(p[j]);
    sum -= Big(w[j]) * (Big(b[j]) * log(q) + (1 - Big(b[j])) * log(1 - q));
  }
  return sum.convert_to<double>();
}

inline std::vector<double> big_weights(const std::vector<double>& h, double sigma) {
  std::vector<Big> raw;
  Big total = 0;
  for (const double x : h) {
    const Big hx(x);
    raw.push_back(exp(Big(sigma) * (hx < Big(0.5) - hx ? hx : Big(0.5) - hx)));
    total += raw.back();
  }
  std::vector<double> out;
  for (const auto& r : raw) out.push_back(Big(r / total).convert_to<double>());
  return out;
}

// lambda * wrong_j / n + (1 - lambda) * h_j with bit j counted from the top.
inline std::vector<double> big_histogram(const std::vector<double>& h, double lambda,
                                         const std::vector<std::uint64_t>& gt, const std::vector<std::uint64_t>& pred) {
  const auto d = h.size();
  std::vector<double> out;
  for (std::size_t j = 0; j < d; ++j) {
    Big wrong = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) wrong += ((gt[i] >> (d - 1 - j)) & 1u) != ((pred[i] >> (d - 1 - j)) & 1u);
    out.push_back((Big(lambda) * wrong / Big(gt.size()) + (1 - Big(lambda)) * Big(h[j])).convert_to<double>());
  }
  return out;
}

inline double big_mask_loss(const std::vector<double>& p, const std::vector<std::uint8_t>& gt) {
  Big sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += abs(Big(p[i]) - Big(gt[i] ? 1 : 0));
  return Big(sum / Big(p.size())).convert_to<double>();
}

// Transforms every point explicitly and scans all pairs.
inline double brute_add(const PoseSE3& a, const PoseSE3& b, const std::vector<Vec3>& pts) {
  double s = 0;
  for (const auto& x : pts) {
    const Vec3 pa = a.R * x + a.t, pb = b.R * x + b.t;
    s += std::sqrt((pa - pb).dot(pa - pb));
  }
  return s / static_cast<double>(pts.size());
}

inline double brute_adds(const PoseSE3& a, const PoseSE3& b, const std::vector<Vec3>& pts) {
  double s = 0;
  for (const auto& x : pts) {
    const Vec3 pa = a.R * x + a.t;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& y : pts) best = std::min(best, (pa - (b.R * y + b.t)).norm());
    s += best;
  }
  return s / static_cast<double>(pts.size());
}

inline double brute_diameter(const std::vector<Vec3>& pts) {
  double best = 0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, (pts[i] - pts[j]).norm());
  return best;
}

}  // namespace oracle
