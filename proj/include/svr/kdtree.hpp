#pragma once

// Static 3-D kd-tree for k-nearest-neighbor queries over a point array.

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "svr/geom.hpp"

namespace svr {

struct Neighbor {
  std::size_t index = 0;
  double dist2 = 0.0;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
};

class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(std::vector<Vec3> points) : pts_(std::move(points)) {
    idx_.resize(pts_.size());
    std::iota(idx_.begin(), idx_.end(), std::size_t{0});
    nodes_.reserve(pts_.size());
    if (!pts_.empty()) build(0, pts_.size(), 0);
  }

  [[nodiscard]] std::size_t size() const { return pts_.size(); }
  [[nodiscard]] const Vec3& point(std::size_t i) const { return pts_[i]; }
  [[nodiscard]] const std::vector<Vec3>& points() const { return pts_; }

  /// The k nearest points sorted by distance; ties break on index.
  [[nodiscard]] std::vector<Neighbor> knn(const Vec3& q, std::size_t k) const {
    std::vector<Neighbor> best;
    if (k == 0 || nodes_.empty()) return best;
    best.reserve(k + 1);
    search(0, q, k, best);
    return best;
  }

  [[nodiscard]] Neighbor nearest(const Vec3& q) const {
    auto r = knn(q, 1);
    if (r.empty()) throw Error(ErrorCode::InsufficientData, "kd-tree: empty point set");
    return r.front();
  }

 private:
  struct Node {
    std::size_t point = 0;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(std::size_t lo, std::size_t hi, int depth) {
    if (lo >= hi) return -1;
    // Split on the axis of largest spread.
    Vec3 mn = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 mx = -mn;
    for (std::size_t i = lo; i < hi; ++i) {
      mn = mn.cwiseMin(pts_[idx_[i]]);
      mx = mx.cwiseMax(pts_[idx_[i]]);
    }
    int axis = 0;
    (mx - mn).maxCoeff(&axis);
    const std::size_t mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi, [&](std::size_t a, std::size_t b) {
      return pts_[a][axis] < pts_[b][axis] || (pts_[a][axis] == pts_[b][axis] && a < b);
    });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({idx_[mid], axis, -1, -1});
    const int l = build(lo, mid, depth + 1);
    const int r = build(mid + 1, hi, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  // `best` stays sorted ascending and holds at most k entries.
  void search(int id, const Vec3& q, std::size_t k, std::vector<Neighbor>& best) const {
    if (id < 0) return;
    const Node& n = nodes_[id];
    const Vec3& p = pts_[n.point];
    const Neighbor cand{n.point, (p - q).squaredNorm()};
    if (best.size() < k || cand < best.back()) {
      best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
      if (best.size() > k) best.pop_back();
    }
    const double diff = q[n.axis] - p[n.axis];
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    search(near, q, k, best);
    if (best.size() < k || diff * diff <= best.back().dist2) search(far, q, k, best);
  }

  std::vector<Vec3> pts_;
  std::vector<std::size_t> idx_;
  std::vector<Node> nodes_;
};

}  // namespace svr
