#pragma once

// Lidar scans, local plane/line fits and ring-curvature feature extraction.

#include <Eigen/Eigenvalues>
#include <cstdint>
#include <span>
#include <vector>

#include "svr/kdtree.hpp"

namespace svr {

enum class FrameTag : std::uint8_t { Real = 0, Virtual = 1 };

/// Per-point semantic label written by the simulator.
enum PointLabel : std::uint8_t { kLabelStatic = 0, kLabelObstacle = 1 };

/// Points are stored ring by ring in azimuth order, which the curvature
/// computation relies on.
struct LidarScan {
  double timestamp = 0.0;
  std::vector<Vec3> points;
  std::vector<std::uint16_t> rings;
  std::vector<std::uint8_t> labels;
  FrameTag frame_tag = FrameTag::Real;

  [[nodiscard]] std::size_t size() const { return points.size(); }
  [[nodiscard]] bool empty() const { return points.empty(); }

  void push_back(const Vec3& p, std::uint16_t ring, std::uint8_t label = kLabelStatic) {
    points.push_back(p);
    rings.push_back(ring);
    labels.push_back(label);
  }

  void validate() const {
    if (rings.size() != points.size() || labels.size() != points.size())
      throw Error(ErrorCode::ShapeMismatch, "lidar scan: per-point arrays differ in length");
    for (const auto& p : points) {
      if (!p.allFinite()) throw Error(ErrorCode::InvalidArgument, "lidar scan: non-finite point");
    }
  }

  friend bool operator==(const LidarScan&, const LidarScan&) = default;
};

struct PlaneFit {
  Vec3 normal = Vec3::UnitZ();  // unit
  double offset = 0.0;          // plane is {x | normal . x = offset}
  double max_residual = 0.0;
  double spread = 0.0;  // sqrt of the middle scatter eigenvalue; small for collinear points
};

struct LineFit {
  Vec3 point = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();  // unit
  double lambda_major = 0.0;
  double lambda_minor = 0.0;  // second eigenvalue of the scatter
};

namespace detail {

inline std::pair<Vec3, Mat3> centroid_scatter(std::span<const Vec3> pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Mat3 s = Mat3::Zero();
  for (const auto& p : pts) s += (p - c) * (p - c).transpose();
  return {c, s / static_cast<double>(pts.size())};
}

}  // namespace detail

/// Total-least-squares plane through >= 3 points. The normal sign is chosen
/// so the plane offset is non-negative (normal faces away from the origin).
[[nodiscard]] inline PlaneFit fit_plane(std::span<const Vec3> pts) {
  if (pts.size() < 3) throw Error(ErrorCode::InsufficientData, "fit_plane: fewer than 3 points");
  const auto [c, s] = detail::centroid_scatter(pts);
  Eigen::SelfAdjointEigenSolver<Mat3> es(s);
  if (es.eigenvalues()(1) < 1e-14) throw Error(ErrorCode::DegenerateGeometry, "fit_plane: collinear points");
  PlaneFit f;
  f.normal = es.eigenvectors().col(0).normalized();
  f.offset = f.normal.dot(c);
  f.spread = std::sqrt(std::max(es.eigenvalues()(1), 0.0));
  if (f.offset < 0.0) {
    f.normal = -f.normal;
    f.offset = -f.offset;
  }
  for (const auto& p : pts) f.max_residual = std::max(f.max_residual, std::abs(f.normal.dot(p) - f.offset));
  return f;
}

[[nodiscard]] inline LineFit fit_line(std::span<const Vec3> pts) {
  if (pts.size() < 2) throw Error(ErrorCode::InsufficientData, "fit_line: fewer than 2 points");
  const auto [c, s] = detail::centroid_scatter(pts);
  Eigen::SelfAdjointEigenSolver<Mat3> es(s);
  LineFit f;
  f.point = c;
  f.direction = es.eigenvectors().col(2).normalized();
  f.lambda_major = es.eigenvalues()(2);
  f.lambda_minor = es.eigenvalues()(1);
  return f;
}

struct FeatureConfig {
  int half_window = 5;             // neighbors on each side along a ring
  double edge_curvature = 0.05;    // above: edge point
  double plane_curvature = 0.01;   // below: planar point
  double max_gap = 0.3;            // m, larger spacing between ring neighbors breaks the window
  int plane_stride = 1;            // keep every n-th planar point
};

/// Edge and planar points of one scan, each with a kd-tree for association.
struct FeatureSet {
  std::vector<Vec3> edges;
  std::vector<Vec3> planes;
  KdTree edge_tree;
  KdTree plane_tree;

  void build_trees() {
    edge_tree = KdTree(edges);
    plane_tree = KdTree(planes);
  }
};

/// Smoothness of every point over its ring window; negative where the window
/// is incomplete or crosses a range discontinuity.
[[nodiscard]] inline std::vector<double> ring_curvature(const LidarScan& scan, const FeatureConfig& cfg) {
  const std::size_t n = scan.size();
  std::vector<double> c(n, -1.0);
  const int w = cfg.half_window;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < static_cast<std::size_t>(w) || i + w >= n) continue;
    bool ok = true;
    Vec3 sum = Vec3::Zero();
    for (int k = -w; k <= w && ok; ++k) {
      const std::size_t j = i + k;
      if (scan.rings[j] != scan.rings[i]) ok = false;
      if (k < w && (scan.points[j + 1] - scan.points[j]).norm() > cfg.max_gap) ok = false;
      if (k != 0) sum += scan.points[j] - scan.points[i];
    }
    if (!ok) continue;
    const double r = scan.points[i].norm();
    if (r < 1e-9) continue;
    c[i] = sum.norm() / (2.0 * w * r);
  }
  return c;
}

struct FeatureIndices {
  std::vector<std::size_t> edges;
  std::vector<std::size_t> planes;
};

/// LOAM-style split into sharp edge points and flat planar points.
/// Points carrying a non-static label are skipped.
[[nodiscard]] inline FeatureIndices classify_features(const LidarScan& scan, const FeatureConfig& cfg = {}) {
  scan.validate();
  const auto curv = ring_curvature(scan, cfg);
  FeatureIndices out;
  int plane_count = 0;
  for (std::size_t i = 0; i < scan.size(); ++i) {
    if (curv[i] < 0.0 || scan.labels[i] != kLabelStatic) continue;
    if (curv[i] > cfg.edge_curvature) {
      out.edges.push_back(i);
    } else if (curv[i] < cfg.plane_curvature) {
      if (plane_count++ % std::max(cfg.plane_stride, 1) == 0) out.planes.push_back(i);
    }
  }
  return out;
}

[[nodiscard]] inline FeatureSet extract_features(const LidarScan& scan, const FeatureConfig& cfg = {}) {
  const auto idx = classify_features(scan, cfg);
  FeatureSet fs;
  for (auto i : idx.edges) fs.edges.push_back(scan.points[i]);
  for (auto i : idx.planes) fs.planes.push_back(scan.points[i]);
  fs.build_trees();
  return fs;
}

}  // namespace svr
