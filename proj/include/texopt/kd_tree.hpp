#pragma once

// Static k-d tree over points in R^4 (quaternion components). Supports exact
// k-nearest and fixed-radius queries under the Euclidean norm.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <queue>
#include <utility>
#include <vector>

namespace texopt {

class KdTree4 {
 public:
  using Point = std::array<double, 4>;

  struct Hit {
    std::uint32_t index;  // position in the point list passed to the constructor
    double dist2;
  };

  KdTree4() = default;
  explicit KdTree4(std::vector<Point> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
    if (!points_.empty()) {
      nodes_.reserve(2 * points_.size() / kLeafSize + 2);
      build(0, order_.size());
    }
  }

  [[nodiscard]] std::size_t size() const { return points_.size(); }
  [[nodiscard]] const Point& point(std::size_t i) const { return points_[i]; }

  /// The k closest points, ascending by distance (ties by index).
  [[nodiscard]] std::vector<Hit> knn(const Point& q, std::size_t k) const {
    std::vector<Hit> heap;
    if (k == 0 || points_.empty()) return heap;
    heap.reserve(k + 1);
    knn_recurse(0, q, k, heap);
    std::sort_heap(heap.begin(), heap.end(), worse);
    return heap;
  }

  /// Every point with squared distance <= r2.
  template <typename Visit>
  void radius(const Point& q, double r2, Visit&& visit) const {
    if (!points_.empty()) radius_recurse(0, q, r2, visit);
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::uint32_t begin, end;
    std::int32_t left = -1, right = -1;
    int dim = 0;
    double split = 0.0;
  };

  static bool worse(const Hit& a, const Hit& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }

  static double dist2(const Point& a, const Point& b) {
    double s = 0.0;
    for (int d = 0; d < 4; ++d) {
      const double t = a[d] - b[d];
      s += t * t;
    }
    return s;
  }

  std::int32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{static_cast<std::uint32_t>(begin), static_cast<std::uint32_t>(end)});
    if (end - begin <= kLeafSize) return id;
    Point lo, hi;
    lo.fill(1e300);
    hi.fill(-1e300);
    for (std::size_t i = begin; i < end; ++i) {
      const Point& p = points_[order_[i]];
      for (int d = 0; d < 4; ++d) {
        lo[d] = std::min(lo[d], p[d]);
        hi[d] = std::max(hi[d], p[d]);
      }
    }
    int dim = 0;
    for (int d = 1; d < 4; ++d) {
      if (hi[d] - lo[d] > hi[dim] - lo[dim]) dim = d;
    }
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       return points_[a][dim] < points_[b][dim] ||
                              (points_[a][dim] == points_[b][dim] && a < b);
                     });
    const double split = points_[order_[mid]][dim];
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    nodes_[id].dim = dim;
    nodes_[id].split = split;
    return id;
  }

  void knn_recurse(std::int32_t id, const Point& q, std::size_t k, std::vector<Hit>& heap) const {
    const Node& n = nodes_[id];
    if (n.left < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const Hit h{order_[i], dist2(q, points_[order_[i]])};
        if (heap.size() < k) {
          heap.push_back(h);
          std::push_heap(heap.begin(), heap.end(), worse);
        } else if (worse(h, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), worse);
          heap.back() = h;
          std::push_heap(heap.begin(), heap.end(), worse);
        }
      }
      return;
    }
    const double diff = q[n.dim] - n.split;
    const std::int32_t near = diff < 0.0 ? n.left : n.right;
    const std::int32_t far = diff < 0.0 ? n.right : n.left;
    knn_recurse(near, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.front().dist2) knn_recurse(far, q, k, heap);
  }

  template <typename Visit>
  void radius_recurse(std::int32_t id, const Point& q, double r2, Visit& visit) const {
    const Node& n = nodes_[id];
    if (n.left < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const double d2 = dist2(q, points_[order_[i]]);
        if (d2 <= r2) visit(order_[i], d2);
      }
      return;
    }
    const double diff = q[n.dim] - n.split;
    const std::int32_t near = diff < 0.0 ? n.left : n.right;
    const std::int32_t far = diff < 0.0 ? n.right : n.left;
    radius_recurse(near, q, r2, visit);
    if (diff * diff <= r2) radius_recurse(far, q, r2, visit);
  }

  std::vector<Point> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace texopt
