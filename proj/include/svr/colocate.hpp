#pragma once

// Drift-aware iterated correction: real lidar residuals, the virtual/real
// drift term, the digital-twin map and the penalty alternating minimization
// of the regularized colocation problem.

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "svr/eskf.hpp"
#include "svr/lidar.hpp"

namespace svr {

struct EdgeAssoc {
  std::size_t index = 0;  // into the real scan
  Vec3 point = Vec3::Zero();
  Vec3 a = Vec3::Zero();  // two distinct points on the edge line
  Vec3 b = Vec3::UnitX();
};

struct PlaneAssoc {
  std::size_t index = 0;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
};

struct VrAssoc {
  std::size_t real_index = 0;
  std::size_t virtual_index = 0;
  Vec3 real_point = Vec3::Zero();     // real sensor frame
  Vec3 virtual_point = Vec3::Zero();  // virtual world frame
};

struct CorrespondenceSet {
  std::vector<EdgeAssoc> edge_assocs;
  std::vector<PlaneAssoc> plane_assocs;
  std::vector<VrAssoc> vr_assocs;

  [[nodiscard]] std::size_t size() const { return edge_assocs.size() + plane_assocs.size() + vr_assocs.size(); }

  void validate() const {
    for (const auto& p : plane_assocs) {
      if (std::abs(p.normal.norm() - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "plane normal not unit");
    }
    for (const auto& e : edge_assocs) {
      if ((e.a - e.b).norm() < 1e-12) throw Error(ErrorCode::InvalidArgument, "edge endpoints coincide");
    }
  }
};

/// Stacked real residuals. Each row depends on one measured point, so the
/// measurement Jacobian is block diagonal and stored row-wise (rows x 3);
/// meas_cov is the per-point 3x3 covariance shared by all points.
struct ResidualEval {
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;       // rows x 18
  Eigen::MatrixXd meas_jacobian;  // rows x 3
  Mat3 meas_cov = Mat3::Identity();
  Eigen::VectorXd weights;        // 1 / (J M J^T) per row

  [[nodiscard]] Eigen::Index rows() const { return residuals.size(); }
};

struct AssociationConfig {
  FeatureConfig features;
  int knn = 5;
  double max_nn_dist = 1.0;     // m, farthest accepted neighbor
  double plane_fit_tol = 0.05;  // m, max deviation of the neighbors from their plane
  double min_plane_spread = 0.01;
  double edge_ratio = 3.0;      // major/minor scatter eigenvalue ratio for a line
  double vr_gate = 0.5;         // m, mutual-NN distance gate
  double feature_trim = 3.0;    // > 0: drop plane/edge pairs whose residual exceeds trim * median + 1e-6 m
  double vr_trim = 3.0;         // > 0: drop pairs farther apart than vr_trim * median + 1e-6 m
  int vr_stride = 2;
  int feature_stride = 1;
};

struct SolverConfig {
  double rho = 1.0;
  int max_alternations = 5;
  int inner_gauss_newton_iters = 3;
  double convergence_tol = 1e-6;
  bool early_stop = true;
  bool reassociate = true;
  bool planar = false;  // pose DOF restricted to (px, py, yaw); extrinsics to yaw + xy
  double lidar_sigma = 0.01;  // m
  AssociationConfig assoc;

  void validate() const {
    if (!(rho > 0.0)) throw Error(ErrorCode::Config, "solver: rho must be positive");
    if (max_alternations < 1 || inner_gauss_newton_iters < 1)
      throw Error(ErrorCode::Config, "solver: iteration counts must be >= 1");
    if (!(convergence_tol > 0.0)) throw Error(ErrorCode::Config, "solver: convergence_tol must be positive");
    if (!(lidar_sigma > 0.0)) throw Error(ErrorCode::Config, "solver: lidar_sigma must be positive");
  }
};

struct SolveResult {
  ErrorState delta_x_star;
  ErrorState delta_y_star;
  RigidTransform extrinsics_star;
  std::vector<double> objective_trace;  // initial value, then one entry per alternation
  int alternations = 0;
  bool converged = false;
  bool diverged = false;
  NavState posterior_state;
  Covariance posterior_cov;
  NavState virtual_state;
  CorrespondenceSet assocs;
};

// ---------------------------------------------------------------------------
// Twin map

/// ^V p = R p + t, ^V q = q(R) * q, ^V v = R v; biases and gravity copied.
[[nodiscard]] inline NavState apply_twin_map(const NavState& real, const RigidTransform& ext) {
  NavState v = real;
  v.p = ext.apply(real.p);
  v.q = quat_compose(ext.quaternion(), real.q);
  v.v = ext.rotation() * real.v;
  return v;
}

// ---------------------------------------------------------------------------
// Association

namespace detail {

inline std::optional<PlaneFit> try_fit_plane(std::span<const Vec3> pts) {
  try {
    return fit_plane(pts);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline std::vector<int> active_dofs(bool planar) {
  if (planar) return {block::kP + 0, block::kP + 1, block::kTheta + 2};
  std::vector<int> all(kErrorDim);
  for (int i = 0; i < kErrorDim; ++i) all[i] = i;
  return all;
}

/// Two unit vectors orthogonal to the edge direction.
inline std::pair<Vec3, Vec3> edge_basis(const Vec3& a, const Vec3& b) {
  const Vec3 u = (b - a).normalized();
  Eigen::Index axis = 0;
  u.cwiseAbs().minCoeff(&axis);
  const Vec3 helper = Vec3::Unit(axis);
  const Vec3 e1 = u.cross(helper).normalized();
  return {e1, u.cross(e1)};
}

}  // namespace detail

/// Mutual nearest neighbors between `real_mapped` (real points already mapped
/// into the virtual world) and `virt`, gated at `gate` meters.
[[nodiscard]] inline std::vector<std::pair<std::size_t, std::size_t>> mutual_nearest(
    const std::vector<Vec3>& real_mapped, const std::vector<Vec3>& virt, double gate) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (real_mapped.empty() || virt.empty()) return out;
  const KdTree vt(virt);
  const KdTree rt(real_mapped);
  for (std::size_t i = 0; i < real_mapped.size(); ++i) {
    const Neighbor nv = vt.nearest(real_mapped[i]);
    if (nv.dist2 > gate * gate) continue;
    if (rt.nearest(virt[nv.index]).index == i) out.emplace_back(i, nv.index);
  }
  return out;
}

/// Pose-independent parts of associating one scan pair: the scan's features
/// and kd-trees over the static real points (scan frame) and static virtual
/// points, reused across re-associations.
struct ScanIndex {
  FeatureIndices feats;
  std::vector<std::size_t> real_idx;
  KdTree real_tree;
  std::vector<std::size_t> virt_idx;
  KdTree virt_tree;
};

[[nodiscard]] inline ScanIndex index_scans(const LidarScan& scan, const LidarScan& virtual_scan,
                                           const AssociationConfig& cfg = {}) {
  if (scan.empty() || virtual_scan.empty())
    throw Error(ErrorCode::InsufficientData, "associate_scan: empty scan");
  ScanIndex ix;
  ix.feats = classify_features(scan, cfg.features);
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < scan.size(); i += std::max(cfg.vr_stride, 1)) {
    if (scan.labels[i] != kLabelStatic) continue;
    pts.push_back(scan.points[i]);
    ix.real_idx.push_back(i);
  }
  ix.real_tree = KdTree(std::move(pts));
  pts.clear();
  for (std::size_t i = 0; i < virtual_scan.size(); ++i) {
    if (virtual_scan.labels[i] != kLabelStatic) continue;
    pts.push_back(virtual_scan.points[i]);
    ix.virt_idx.push_back(i);
  }
  ix.virt_tree = KdTree(std::move(pts));
  return ix;
}

/// LOAM-style edge/plane association of the scan's own features against the
/// map features, plus virtual/real pairs by gated mutual nearest neighbor.
/// `state_guess` maps the scan frame into the map frame and `ext_guess` maps
/// the map frame into the virtual world (where `virtual_scan` lives).
[[nodiscard]] inline CorrespondenceSet associate_scan(const LidarScan& scan, const FeatureSet& map_features,
                                                      const ScanIndex& ix, const NavState& state_guess,
                                                      const RigidTransform& ext_guess,
                                                      const AssociationConfig& cfg = {}) {
  const RigidTransform pose = state_guess.transform();
  const auto& feats = ix.feats;
  const double max_d2 = cfg.max_nn_dist * cfg.max_nn_dist;
  const auto k = static_cast<std::size_t>(cfg.knn);
  const std::size_t stride = std::max(cfg.feature_stride, 1);
  CorrespondenceSet cs;

  if (map_features.plane_tree.size() >= k) {
    std::vector<Vec3> nb(k);
    for (std::size_t n = 0; n < feats.planes.size(); n += stride) {
      const std::size_t i = feats.planes[n];
      const Vec3 m = pose.apply(scan.points[i]);
      const auto nn = map_features.plane_tree.knn(m, k);
      if (nn.size() < k || nn.back().dist2 > max_d2) continue;
      for (std::size_t j = 0; j < k; ++j) nb[j] = map_features.plane_tree.point(nn[j].index);
      const auto fit = detail::try_fit_plane(nb);
      if (!fit || fit->max_residual > cfg.plane_fit_tol || fit->spread < cfg.min_plane_spread) continue;
      cs.plane_assocs.push_back({i, scan.points[i], fit->normal, fit->offset});
    }
  }

  if (map_features.edge_tree.size() >= k) {
    std::vector<Vec3> nb(k);
    for (std::size_t n = 0; n < feats.edges.size(); n += stride) {
      const std::size_t i = feats.edges[n];
      const Vec3 m = pose.apply(scan.points[i]);
      const auto nn = map_features.edge_tree.knn(m, k);
      if (nn.size() < k || nn.back().dist2 > max_d2) continue;
      for (std::size_t j = 0; j < k; ++j) nb[j] = map_features.edge_tree.point(nn[j].index);
      const LineFit line = fit_line(nb);
      if (!(line.lambda_major > cfg.edge_ratio * line.lambda_minor) || line.lambda_major < 1e-12) continue;
      cs.edge_assocs.push_back({i, scan.points[i], line.point - 0.1 * line.direction,
                                line.point + 0.1 * line.direction});
    }
  }

  if (cfg.feature_trim > 0.0 && !cs.plane_assocs.empty()) {
    // One threshold from the pooled residuals; a handful of edges cannot set their own median.
    auto plane_d = [&](const PlaneAssoc& a) { return std::abs(a.normal.dot(pose.apply(a.point)) - a.offset); };
    auto edge_d = [&](const EdgeAssoc& a) {
      const Vec3 m = pose.apply(a.point);
      const Vec3 u = (a.b - a.a).normalized();
      return ((m - a.a) - (m - a.a).dot(u) * u).norm();
    };
    std::vector<double> d;
    for (const auto& a : cs.plane_assocs) d.push_back(plane_d(a));
    for (const auto& a : cs.edge_assocs) d.push_back(edge_d(a));
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    const double keep = cfg.feature_trim * d[d.size() / 2] + 1e-6;
    std::erase_if(cs.plane_assocs, [&](const PlaneAssoc& a) { return plane_d(a) > keep; });
    std::erase_if(cs.edge_assocs, [&](const EdgeAssoc& a) { return edge_d(a) > keep; });
  }

  // Virtual/real pairs by mutual nearest neighbor under the guess; virtual
  // points tagged as obstacles have no real counterpart.
  const RigidTransform to_virtual = ext_guess * pose;
  const RigidTransform to_scan = to_virtual.inverse();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> dist;
  if (ix.real_tree.size() > 0 && ix.virt_tree.size() > 0) {
    for (std::size_t r = 0; r < ix.real_tree.size(); ++r) {
      const Vec3 m = to_virtual.apply(ix.real_tree.point(r));
      const Neighbor nv = ix.virt_tree.nearest(m);
      if (nv.dist2 > cfg.vr_gate * cfg.vr_gate) continue;
      if (ix.real_tree.nearest(to_scan.apply(ix.virt_tree.point(nv.index))).index != r) continue;
      pairs.emplace_back(r, nv.index);
      dist.push_back(std::sqrt(nv.dist2));
    }
  }
  double keep = std::numeric_limits<double>::infinity();
  if (cfg.vr_trim > 0.0 && !dist.empty()) {
    std::vector<double> d = dist;
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    keep = cfg.vr_trim * d[d.size() / 2] + 1e-6;
  }
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    if (dist[n] > keep) continue;
    const auto [r, v] = pairs[n];
    cs.vr_assocs.push_back({ix.real_idx[r], ix.virt_idx[v], ix.real_tree.point(r), ix.virt_tree.point(v)});
  }

  if (cs.size() < 10) throw Error(ErrorCode::DegenerateGeometry, "associate_scan: fewer than 10 associations");
  return cs;
}

[[nodiscard]] inline CorrespondenceSet associate_scan(const LidarScan& scan, const FeatureSet& map_features,
                                                      const LidarScan& virtual_scan, const NavState& state_guess,
                                                      const RigidTransform& ext_guess,
                                                      const AssociationConfig& cfg = {}) {
  return associate_scan(scan, map_features, index_scans(scan, virtual_scan, cfg), state_guess, ext_guess, cfg);
}

// ---------------------------------------------------------------------------
// Residuals

/// Point-to-plane rows (signed) and two point-to-line rows per edge point
/// (components across the line; their norm is the point-to-line distance).
[[nodiscard]] inline ResidualEval residual_real(const CorrespondenceSet& assocs, const NavState& prior,
                                                const ErrorState& delta, double lidar_sigma = 0.01) {
  const NavState x = boxplus_inject(prior, delta);
  const Mat3 r = x.q.matrix();
  const Mat3 jr = right_jacobian(delta.dtheta);
  const Eigen::Index rows =
      static_cast<Eigen::Index>(assocs.plane_assocs.size() + 2 * assocs.edge_assocs.size());
  ResidualEval ev;
  ev.residuals.resize(rows);
  ev.jacobian = Eigen::MatrixXd::Zero(rows, kErrorDim);
  ev.meas_jacobian.resize(rows, 3);
  ev.meas_cov = Mat3::Identity() * lidar_sigma * lidar_sigma;
  ev.weights.resize(rows);

  Eigen::Index row = 0;
  auto put = [&](const Vec3& dir, const Vec3& z, double value) {
    const Vec3 m = r * z + x.p;
    ev.residuals(row) = dir.dot(m) - value;
    ev.jacobian.block<1, 3>(row, block::kP) = dir.transpose();
    ev.jacobian.block<1, 3>(row, block::kTheta) = -dir.transpose() * r * skew(z) * jr;
    ev.meas_jacobian.row(row) = dir.transpose() * r;
    const double s = ev.meas_jacobian.row(row) * ev.meas_cov * ev.meas_jacobian.row(row).transpose();
    ev.weights(row) = 1.0 / s;
    ++row;
  };
  for (const auto& p : assocs.plane_assocs) put(p.normal, p.point, p.offset);
  for (const auto& e : assocs.edge_assocs) {
    const auto [e1, e2] = detail::edge_basis(e.a, e.b);
    put(e1, e.point, e1.dot(e.a));
    put(e2, e.point, e2.dot(e.a));
  }
  return ev;
}

/// Stacked 3-vectors ext(x (+) delta . z_real) - z_virtual.
[[nodiscard]] inline Eigen::VectorXd drift_vr(const CorrespondenceSet& assocs, const NavState& prior,
                                              const ErrorState& delta, const RigidTransform& ext) {
  if (assocs.vr_assocs.empty()) throw Error(ErrorCode::NoOverlap, "drift_vr: no virtual/real pairs");
  const RigidTransform t = ext * boxplus_inject(prior, delta).transform();
  Eigen::VectorXd d(3 * assocs.vr_assocs.size());
  for (std::size_t j = 0; j < assocs.vr_assocs.size(); ++j) {
    const auto& a = assocs.vr_assocs[j];
    d.segment<3>(3 * j) = t.apply(a.real_point) - a.virtual_point;
  }
  return d;
}

/// Jacobian of drift_vr with respect to the error state.
[[nodiscard]] inline Eigen::MatrixXd drift_jacobian(const CorrespondenceSet& assocs, const NavState& prior,
                                                    const ErrorState& delta, const RigidTransform& ext) {
  const NavState x = boxplus_inject(prior, delta);
  const Mat3 re = ext.rotation();
  const Mat3 rx = x.q.matrix();
  const Mat3 jr = right_jacobian(delta.dtheta);
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(3 * static_cast<Eigen::Index>(assocs.vr_assocs.size()), kErrorDim);
  for (std::size_t k = 0; k < assocs.vr_assocs.size(); ++k) {
    const Eigen::Index r0 = 3 * static_cast<Eigen::Index>(k);
    j.block<3, 3>(r0, block::kP) = re;
    j.block<3, 3>(r0, block::kTheta) = -re * rx * skew(assocs.vr_assocs[k].real_point) * jr;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Objective of the penalized problem

/// Inverse of the prior covariance after the 1e-12 I regularization.
[[nodiscard]] inline Mat18 information_matrix(const Covariance& cov) {
  const Mat18 reg = cov.matrix + 1e-12 * Mat18::Identity();
  Eigen::LDLT<Mat18> ldlt(reg);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw Error(ErrorCode::DegenerateGeometry, "prior covariance is not positive definite");
  const Mat18 inv = ldlt.solve(Mat18::Identity());
  if (!inv.allFinite()) throw Error(ErrorCode::DegenerateGeometry, "prior covariance is singular");
  return 0.5 * (inv + inv.transpose());
}

struct ObjectiveParts {
  double prior = 0.0;
  double real = 0.0;
  double drift = 0.0;
  double penalty = 0.0;

  [[nodiscard]] double total() const { return prior + real + drift + penalty; }
};

[[nodiscard]] inline ObjectiveParts objective_parts(const CorrespondenceSet& assocs, const NavState& prior,
                                                    const Mat18& info, const ErrorState& dx, const ErrorState& dy,
                                                    const RigidTransform& ext, double rho, double lidar_sigma) {
  ObjectiveParts o;
  const Vec18 x = dx.vector();
  const Vec18 e = x - dy.vector();
  o.prior = x.dot(info * x);
  o.penalty = rho * e.dot(info * e);
  if (!assocs.plane_assocs.empty() || !assocs.edge_assocs.empty()) {
    const auto ev = residual_real(assocs, prior, dx, lidar_sigma);
    o.real = ev.residuals.cwiseProduct(ev.residuals).dot(ev.weights);
  }
  if (!assocs.vr_assocs.empty()) o.drift = drift_vr(assocs, prior, dy, ext).squaredNorm();
  return o;
}

namespace detail {

inline Eigen::MatrixXd select_cols(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(idx[k]);
  return out;
}

inline Eigen::MatrixXd select_block(const Mat18& m, const std::vector<int>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) out(a, b) = m(idx[a], idx[b]);
  return out;
}

inline Eigen::VectorXd select(const Vec18& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(idx[k]);
  return out;
}

inline Vec18 scatter(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Vec18 out = Vec18::Zero();
  for (std::size_t k = 0; k < idx.size(); ++k) out(idx[k]) = v(static_cast<Eigen::Index>(k));
  return out;
}

inline Eigen::VectorXd solve_normal(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw Error(ErrorCode::DegenerateGeometry, "normal equations are not positive definite");
  const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
  if (d.minCoeff() <= 1e-15 * std::max(d.maxCoeff(), 1e-300))
    throw Error(ErrorCode::DegenerateGeometry, "normal equations are singular");
  Eigen::VectorXd x = ldlt.solve(b);
  if (!x.allFinite()) throw Error(ErrorCode::DegenerateGeometry, "normal equations are singular");
  return x;
}

/// Backtracking on the segment from `from` to `to`; returns the best point
/// found that does not increase f, or `from`.
template <class F>
inline Vec18 line_search(const F& f, const Vec18& from, const Vec18& to, double f_from) {
  double alpha = 1.0;
  for (int k = 0; k < 12; ++k, alpha *= 0.5) {
    const Vec18 cand = from + alpha * (to - from);
    if (f(cand) <= f_from) return cand;
  }
  return from;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PAM subproblems

/// Prior information over the solved DOFs. In planar mode the inactive DOFs
/// are marginalized out (inverse of the active covariance block) rather than
/// clamped at the prior, which would pin position to the predicted velocity.
[[nodiscard]] inline Mat18 prior_information(const Covariance& cov, bool planar) {
  if (!planar) return information_matrix(cov);
  const auto idx = detail::active_dofs(true);
  const Eigen::MatrixXd block = detail::select_block(cov.matrix, idx) +
                                1e-12 * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
  Eigen::LDLT<Eigen::MatrixXd> ldlt(block);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw Error(ErrorCode::DegenerateGeometry, "prior covariance is not positive definite");
  const Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(block.rows(), block.cols()));
  Mat18 out = Mat18::Zero();
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = 0; b < idx.size(); ++b)
      out(idx[a], idx[b]) = 0.5 * (inv(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +
                                   inv(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)));
  return out;
}

/// Subproblem in the pose error with the split variable fixed: prior
/// Mahalanobis term + weighted real residuals + rho-weighted penalty.
[[nodiscard]] inline ErrorState solve_delta_x(const NavState& prior, const Covariance& cov,
                                              const CorrespondenceSet& assocs, const ErrorState& y_fixed,
                                              const SolverConfig& cfg, const ErrorState& x_init = {}) {
  const Mat18 info = prior_information(cov, cfg.planar);
  const auto idx = detail::active_dofs(cfg.planar);
  const Eigen::MatrixXd info_a = detail::select_block(info, idx);
  const Vec18 y = detail::scatter(detail::select(y_fixed.vector(), idx), idx);
  const bool has_meas = !assocs.plane_assocs.empty() || !assocs.edge_assocs.empty();

  auto f = [&](const Vec18& v) {
    const Vec18 e = v - y;
    double val = v.dot(info * v) + cfg.rho * e.dot(info * e);
    if (has_meas) {
      const auto ev = residual_real(assocs, prior, ErrorState::from_vector(v), cfg.lidar_sigma);
      val += ev.residuals.cwiseProduct(ev.residuals).dot(ev.weights);
    }
    return val;
  };

  Vec18 cur = detail::scatter(detail::select(x_init.vector(), idx), idx);
  double f_cur = f(cur);
  for (int it = 0; it < cfg.inner_gauss_newton_iters; ++it) {
    Eigen::MatrixXd a = (1.0 + cfg.rho) * info_a;
    Eigen::VectorXd b = cfg.rho * info_a * detail::select(y, idx);
    if (has_meas) {
      const auto ev = residual_real(assocs, prior, ErrorState::from_vector(cur), cfg.lidar_sigma);
      const Eigen::MatrixXd h = detail::select_cols(ev.jacobian, idx);
      const Eigen::MatrixXd htw = h.transpose() * ev.weights.asDiagonal();
      a += htw * h;
      b += htw * (h * detail::select(cur, idx) - ev.residuals);
    }
    const Vec18 next = detail::scatter(detail::solve_normal(a, b), idx);
    const Vec18 acc = detail::line_search(f, cur, next, f_cur);
    const double step = (acc - cur).norm();
    cur = acc;
    f_cur = f(cur);
    if (step < 1e-14) break;
  }
  return ErrorState::from_vector(cur);
}

/// Least-squares rigid transform dst ~ R src + t (Kabsch). In planar mode the
/// rotation is a yaw and only x/y of the translation move; z is kept from
/// `planar_z`.
[[nodiscard]] inline RigidTransform kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, bool planar,
                                           double planar_z = 0.0) {
  if (src.size() != dst.size()) throw Error(ErrorCode::ShapeMismatch, "kabsch: point counts differ");
  if (src.size() < 3) throw Error(ErrorCode::UnobservableRotation, "kabsch: fewer than 3 pairs");
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(src.size());
  cd /= static_cast<double>(src.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();

  if (planar) {
    const double sxx = h(0, 0) + h(1, 1);
    const double sxy = h(0, 1) - h(1, 0);
    if (std::hypot(sxx, sxy) < 1e-18) throw Error(ErrorCode::UnobservableRotation, "kabsch: coincident points");
    const double yaw = std::atan2(sxy, sxx);
    const Mat3 r = rotation_about_z(yaw);
    const Vec3 t = cd - r * cs;
    return {r, Vec3(t.x(), t.y(), planar_z)};
  }

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (sv(1) <= 1e-9 * std::max(sv(0), 1e-300) || sv(0) < 1e-18)
    throw Error(ErrorCode::UnobservableRotation, "kabsch: collinear correspondences");
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() > 0.0 ? 1.0 : -1.0;
  Mat3 r = v * d * u.transpose();
  r = Eigen::Quaterniond(r).normalized().toRotationMatrix();
  return {r, cd - r * cs};
}

struct ExtrinsicsSolution {
  ErrorState delta_y;
  RigidTransform ext;
};

/// Subproblem in (extrinsics, split variable) with the pose error fixed:
/// alternates Procrustes registration and a Gauss-Newton step on the drift
/// plus penalty terms.
[[nodiscard]] inline ExtrinsicsSolution solve_extrinsics_y(const NavState& prior, const Covariance& cov,
                                                           const ErrorState& x_fixed, const CorrespondenceSet& assocs,
                                                           const RigidTransform& ext_init, const SolverConfig& cfg,
                                                           const ErrorState& y_init = {}) {
  if (assocs.vr_assocs.empty()) throw Error(ErrorCode::NoOverlap, "solve_extrinsics_y: no virtual/real pairs");
  const Mat18 info = prior_information(cov, cfg.planar);
  const auto idx = detail::active_dofs(cfg.planar);
  const Eigen::MatrixXd info_a = detail::select_block(info, idx);
  const Vec18 x = detail::scatter(detail::select(x_fixed.vector(), idx), idx);

  auto f = [&](const Vec18& y, const RigidTransform& e) {
    const Vec18 d = x - y;
    return drift_vr(assocs, prior, ErrorState::from_vector(y), e).squaredNorm() + cfg.rho * d.dot(info * d);
  };

  std::vector<Vec3> dst;
  dst.reserve(assocs.vr_assocs.size());
  for (const auto& a : assocs.vr_assocs) dst.push_back(a.virtual_point);

  Vec18 y = detail::scatter(detail::select(y_init.vector(), idx), idx);
  RigidTransform ext = ext_init;
  double f_cur = f(y, ext);
  for (int it = 0; it < cfg.inner_gauss_newton_iters; ++it) {
    const double f_start = f_cur;
    // (i) registration with the split variable fixed
    const RigidTransform pose = boxplus_inject(prior, ErrorState::from_vector(y)).transform();
    std::vector<Vec3> src;
    src.reserve(dst.size());
    for (const auto& a : assocs.vr_assocs) src.push_back(pose.apply(a.real_point));
    const RigidTransform reg = kabsch(src, dst, cfg.planar, ext_init.translation().z());
    const double f_reg = f(y, reg);
    if (f_reg <= f_cur) {
      ext = reg;
      f_cur = f_reg;
    }
    // (ii) split variable with the extrinsics fixed
    const ErrorState ye = ErrorState::from_vector(y);
    const Eigen::MatrixXd j = detail::select_cols(drift_jacobian(assocs, prior, ye, ext), idx);
    const Eigen::VectorXd d = drift_vr(assocs, prior, ye, ext);
    const Eigen::MatrixXd a = j.transpose() * j + cfg.rho * info_a;
    const Eigen::VectorXd b = j.transpose() * (j * detail::select(y, idx) - d) + cfg.rho * info_a * detail::select(x, idx);
    const Vec18 next = detail::scatter(detail::solve_normal(a, b), idx);
    y = detail::line_search([&](const Vec18& v) { return f(v, ext); }, y, next, f_cur);
    f_cur = f(y, ext);
    if (f_start - f_cur < cfg.convergence_tol * std::max(1.0, f_cur) * 1e-3) break;
  }
  return {ErrorState::from_vector(y), ext};
}

// ---------------------------------------------------------------------------
// Full solve

/// Re-association hook: given the current pose error and extrinsics, returns
/// a fresh correspondence set.
using Reassociate = std::function<CorrespondenceSet(const ErrorState&, const RigidTransform&)>;

/// PAM over a correspondence set; `reassoc` (optional) refreshes associations
/// after every alternation, accepted only when it does not raise the objective.
[[nodiscard]] inline SolveResult pam_solve_assoc(const NavState& prior, const Covariance& cov,
                                                 CorrespondenceSet assocs, const RigidTransform& ext_init,
                                                 const SolverConfig& cfg, const Reassociate& reassoc = {}) {
  cfg.validate();
  const Mat18 info = prior_information(cov, cfg.planar);
  ErrorState dx, dy;
  RigidTransform ext = ext_init;
  auto total = [&](const CorrespondenceSet& cs) {
    return objective_parts(cs, prior, info, dx, dy, ext, cfg.rho, cfg.lidar_sigma).total();
  };

  SolveResult res;
  double f_prev = total(assocs);
  res.objective_trace.push_back(f_prev);
  ErrorState best_dx = dx, best_dy = dy;
  RigidTransform best_ext = ext;
  CorrespondenceSet best_assocs = assocs;

  for (int k = 0; k < cfg.max_alternations; ++k) {
    dx = solve_delta_x(prior, cov, assocs, dy, cfg, dx);
    if (!assocs.vr_assocs.empty()) {
      const auto sol = solve_extrinsics_y(prior, cov, dx, assocs, ext, cfg, dy);
      dy = sol.delta_y;
      ext = sol.ext;
    } else {
      dy = dx;
    }
    double f = total(assocs);
    if (cfg.reassociate && reassoc) {
      try {
        CorrespondenceSet fresh = reassoc(dx, ext);
        const double f_fresh = total(fresh);
        if (f_fresh <= f) {
          assocs = std::move(fresh);
          f = f_fresh;
        }
      } catch (const Error&) {
        // keep the current associations
      }
    }
    res.objective_trace.push_back(f);
    res.alternations = k + 1;
    if (f > f_prev + 1e-9) {
      res.diverged = true;
      break;
    }
    best_dx = dx;
    best_dy = dy;
    best_ext = ext;
    best_assocs = assocs;
    const bool small = f_prev - f < cfg.convergence_tol * std::max(1.0, f);
    f_prev = f;
    if (small) {
      res.converged = true;
      if (cfg.early_stop) break;
    }
  }

  res.delta_x_star = best_dx;
  res.delta_y_star = best_dy;
  res.extrinsics_star = best_ext;
  res.assocs = best_assocs;

  // Iterated-KF posterior at the final linearization.
  Mat18 info_post = information_matrix(cov);
  if (!best_assocs.plane_assocs.empty() || !best_assocs.edge_assocs.empty()) {
    const auto ev = residual_real(best_assocs, prior, best_dx, cfg.lidar_sigma);
    info_post += ev.jacobian.transpose() * ev.weights.asDiagonal() * ev.jacobian;
  }
  Eigen::LDLT<Mat18> ldlt(info_post);
  res.posterior_cov.matrix = ldlt.solve(Mat18::Identity());
  res.posterior_cov.symmetrize();
  ErrorState applied = best_dx;
  if (cfg.planar) {
    // Planar velocity takes the conditional-mean correction given the solved DOFs.
    const auto idx = detail::active_dofs(true);
    const std::vector<int> rest = {block::kV + 0, block::kV + 1};
    Eigen::MatrixXd s_ra(rest.size(), idx.size());
    for (std::size_t a = 0; a < rest.size(); ++a)
      for (std::size_t b = 0; b < idx.size(); ++b) s_ra(a, b) = cov.matrix(rest[a], idx[b]);
    const Eigen::VectorXd da = detail::select(best_dx.vector(), idx);
    const Eigen::VectorXd dr = s_ra * detail::select_block(cov.matrix, idx).ldlt().solve(da);
    Vec18 full = best_dx.vector();
    for (std::size_t a = 0; a < rest.size(); ++a) full(rest[a]) = dr(static_cast<Eigen::Index>(a));
    applied = ErrorState::from_vector(full);
  }
  res.posterior_state = boxplus_inject(prior, applied);
  res.virtual_state = apply_twin_map(res.posterior_state, best_ext);
  return res;
}

/// Associates the scan pair, then runs PAM with per-alternation re-association.
[[nodiscard]] inline SolveResult pam_solve(const NavState& prior, const Covariance& cov, const LidarScan& real_scan,
                                           const LidarScan& virtual_scan, const FeatureSet& map_features,
                                           const RigidTransform& ext_init, const SolverConfig& cfg) {
  const ScanIndex ix = index_scans(real_scan, virtual_scan, cfg.assoc);
  auto assoc_at = [&](const ErrorState& dx, const RigidTransform& ext) {
    return associate_scan(real_scan, map_features, ix, boxplus_inject(prior, dx), ext, cfg.assoc);
  };
  return pam_solve_assoc(prior, cov, assoc_at(ErrorState::zero(), ext_init), ext_init, cfg, assoc_at);
}

// ---------------------------------------------------------------------------
// World poses and the matching-error metric

struct WorldPoses {
  RigidTransform real;
  RigidTransform virt;

  [[nodiscard]] Pose2D real_2d() const { return Pose2D::from_transform(real); }
  [[nodiscard]] Pose2D virtual_2d() const { return Pose2D::from_transform(virt); }
};

/// Composes the frame's transformation onto the accumulated real pose; the
/// virtual pose is the twin map of the same transformation (the extrinsics map
/// the previous real body frame into the virtual world).
[[nodiscard]] inline WorldPoses finalize_posterior(const SolveResult& result, const RigidTransform& real_accum) {
  const RigidTransform x = result.posterior_state.transform();
  return {real_accum * x, result.extrinsics_star * x};
}

[[nodiscard]] inline Pose2D finalize_posterior(const Pose2D& real_accum, const NavState& frame_state) {
  return real_accum * Pose2D::from_transform(frame_state.transform());
}

struct MatchingErrorConfig {
  int knn = 5;
  double plane_tol = 0.03;      // m, max deviation of the neighbors from their fitted plane
  double max_nn_dist = 0.5;     // m
  double min_plane_spread = 0.01;
  int stride = 1;  // every stride-th static virtual point
};

struct MatchingError {
  double mean = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;
};

/// Mean |point-to-plane| distance of the static virtual points, mapped into the
/// real sensor frame, to planes fitted locally on the real scan.
[[nodiscard]] inline MatchingError matching_error(const LidarScan& real_scan, const LidarScan& virtual_scan,
                                                  const NavState& state, const RigidTransform& ext,
                                                  const MatchingErrorConfig& cfg = {}) {
  if (virtual_scan.empty()) throw Error(ErrorCode::InsufficientData, "matching_error: empty virtual scan");
  const auto k = static_cast<std::size_t>(cfg.knn);
  if (real_scan.size() < k) throw Error(ErrorCode::MetricUndefined, "matching_error: real scan too small");
  const KdTree tree(real_scan.points);
  const RigidTransform to_real = (ext * state.transform()).inverse();
  MatchingError out;
  double sum = 0.0;
  std::vector<Vec3> nb(k);
  std::size_t seen = 0;
  for (std::size_t i = 0; i < virtual_scan.size(); ++i) {
    if (virtual_scan.labels[i] != kLabelStatic) continue;
    if (seen++ % static_cast<std::size_t>(std::max(cfg.stride, 1)) != 0) continue;
    const Vec3 z = to_real.apply(virtual_scan.points[i]);
    const auto nn = tree.knn(z, k);
    if (nn.back().dist2 > cfg.max_nn_dist * cfg.max_nn_dist) {
      ++out.excluded;
      continue;
    }
    for (std::size_t j = 0; j < k; ++j) nb[j] = real_scan.points[nn[j].index];
    const auto fit = detail::try_fit_plane(nb);
    if (!fit || fit->max_residual > cfg.plane_tol || fit->spread < cfg.min_plane_spread) {
      ++out.excluded;
      continue;
    }
    sum += std::abs(fit->normal.dot(z) - fit->offset);
    ++out.used;
  }
  if (out.used == 0) throw Error(ErrorCode::MetricUndefined, "matching_error: no valid plane fits");
  out.mean = sum / static_cast<double>(out.used);
  return out;
}

}  // namespace svr
