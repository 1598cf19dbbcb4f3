#pragma once

#include "zebra/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace zebra {

/// Exact maximum pairwise distance. Points are visited in decreasing distance
/// from their centroid so that the triangle-inequality bound
/// |p - q| <= |p - c| + |q - c| prunes most pairs on non-spherical clouds.
inline double exact_diameter(std::span<const Vec3> points) {
  require(points.size() >= 2, "diameter needs at least 2 points");
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  c /= static_cast<double>(points.size());

  std::vector<std::pair<double, std::size_t>> order(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) order[i] = {(points[i] - c).norm(), i};
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });

  double best2 = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const double ri = order[i].first;
    // Slack keeps the pruning exact under rounding of the norms.
    const double bound_i = (ri + order[i == 0 ? 1 : 0].first) * (1.0 + 1e-12);
    if (bound_i * bound_i < best2) break;
    const Vec3& p = points[order[i].second];
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const double bound = (ri + order[j].first) * (1.0 + 1e-12);
      if (bound * bound < best2) break;
      best2 = std::max(best2, (p - points[order[j].second]).squaredNorm());
    }
  }
  return std::sqrt(best2);
}

/// Static 3D kd-tree for exact nearest-neighbour queries.
class KdTree {
public:
  explicit KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    index_.resize(points_.size());
    std::iota(index_.begin(), index_.end(), std::size_t{0});
    if (!points_.empty()) root_ = build(0, index_.size(), 0);
  }

  bool empty() const { return points_.empty(); }

  /// Squared distance to the closest stored point.
  double nearest_squared(const Vec3& q) const {
    require(!points_.empty(), "nearest query on empty kd-tree");
    double best = std::numeric_limits<double>::infinity();
    search(root_, q, best);
    return best;
  }

  double nearest(const Vec3& q) const { return std::sqrt(nearest_squared(q)); }

private:
  struct Node {
    std::size_t begin, end;  // leaf range in index_
    int axis = -1;           // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
  };

  static constexpr std::size_t kLeafSize = 8;

  int build(std::size_t begin, std::size_t end, int depth) {
    Node node{begin, end};
    if (end - begin > kLeafSize) {
      Vec3 lo = points_[index_[begin]], hi = lo;
      for (std::size_t k = begin; k < end; ++k) {
        lo = lo.cwiseMin(points_[index_[k]]);
        hi = hi.cwiseMax(points_[index_[k]]);
      }
      int axis = 0;
      (hi - lo).maxCoeff(&axis);
      const std::size_t mid = begin + (end - begin) / 2;
      std::nth_element(index_.begin() + static_cast<std::ptrdiff_t>(begin),
                       index_.begin() + static_cast<std::ptrdiff_t>(mid),
                       index_.begin() + static_cast<std::ptrdiff_t>(end),
                       [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
      node.axis = axis;
      node.split = points_[index_[mid]][axis];
      const int self = static_cast<int>(nodes_.size());
      nodes_.push_back(node);
      const int l = build(begin, mid, depth + 1);
      const int r = build(mid, end, depth + 1);
      nodes_[self].left = l;
      nodes_[self].right = r;
      return self;
    }
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }

  void search(int id, const Vec3& q, double& best) const {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (std::size_t k = node.begin; k < node.end; ++k)
        best = std::min(best, (points_[index_[k]] - q).squaredNorm());
      return;
    }
    const double diff = q[node.axis] - node.split;
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    search(near, q, best);
    if (diff * diff <= best) search(far, q, best);
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> index_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace zebra
