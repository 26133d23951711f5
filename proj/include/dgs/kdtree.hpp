#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "dgs/types.hpp"

namespace dgs {

struct Neighbor {
  std::size_t index = 0;
  double dist2 = std::numeric_limits<double>::infinity();

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
};

/// Static 3-d tree over a point set. Queries order results by (distance,
/// index), so equidistant points resolve to the lowest index.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points) : points_(std::move(points)) { build(); }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  Neighbor nearest(const Vec3& q) const {
    Neighbor best;
    if (!nodes_.empty()) nearest_rec(0, q, best);
    return best;
  }

  /// Up to k nearest points sorted ascending.
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k) const {
    std::vector<Neighbor> heap;  // max-heap on (dist2, index)
    if (k == 0 || nodes_.empty()) return heap;
    heap.reserve(k + 1);
    knn_rec(0, q, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

  /// All points with squared distance <= r2, sorted ascending.
  std::vector<Neighbor> radius(const Vec3& q, double r2) const {
    std::vector<Neighbor> out;
    if (!nodes_.empty()) radius_rec(0, q, r2, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  static constexpr std::size_t kLeaf = 8;

  struct Node {
    std::size_t begin = 0, end = 0;  // range into order_
    int axis = -1;                    // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
    Vec3 lo, hi;
  };

  void build() {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.clear();
    if (points_.empty()) return;
    nodes_.reserve(2 * points_.size() / kLeaf + 2);
    build_rec(0, points_.size());
  }

  std::size_t build_rec(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({});
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = lo;
    node.hi = hi;
    if (end - begin > kLeaf) {
      int axis = 0;
      (hi - lo).maxCoeff(&axis);
      const std::size_t mid = begin + (end - begin) / 2;
      std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                       [&](std::size_t a, std::size_t b) {
                         const double pa = points_[a][axis], pb = points_[b][axis];
                         return pa < pb || (pa == pb && a < b);
                       });
      node.axis = axis;
      node.split = points_[order_[mid]][axis];
      node.left = build_rec(begin, mid);
      node.right = build_rec(mid, end);
    }
    nodes_[id] = node;
    return id;
  }

  static double box_dist2(const Node& n, const Vec3& q) {
    double d = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double e = std::max({n.lo[a] - q[a], 0.0, q[a] - n.hi[a]});
      d += e * e;
    }
    return d;
  }

  void nearest_rec(std::size_t id, const Vec3& q, Neighbor& best) const {
    const Node& n = nodes_[id];
    if (box_dist2(n, q) > best.dist2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const Neighbor cand{order_[i], (points_[order_[i]] - q).squaredNorm()};
        if (cand < best) best = cand;
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    nearest_rec(go_left ? n.left : n.right, q, best);
    nearest_rec(go_left ? n.right : n.left, q, best);
  }

  void knn_rec(std::size_t id, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    if (heap.size() == k && box_dist2(n, q) > heap.front().dist2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const Neighbor cand{order_[i], (points_[order_[i]] - q).squaredNorm()};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    knn_rec(go_left ? n.left : n.right, q, k, heap);
    knn_rec(go_left ? n.right : n.left, q, k, heap);
  }

  void radius_rec(std::size_t id, const Vec3& q, double r2, std::vector<Neighbor>& out) const {
    const Node& n = nodes_[id];
    if (box_dist2(n, q) > r2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const double d2 = (points_[order_[i]] - q).squaredNorm();
        if (d2 <= r2) out.push_back({order_[i], d2});
      }
      return;
    }
    radius_rec(n.left, q, r2, out);
    radius_rec(n.right, q, r2, out);
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace dgs
