#pragma once

// Batch runs over recorded datasets: colocation (filter + PAM per frame) and
// synthesis (registration, MAAF, compositing), their run reports, and the
// comparison table built from several reports.

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>

#include "svr/colocate.hpp"
#include "svr/record.hpp"
#include "svr/synthesis.hpp"

namespace svr {

inline constexpr const char* kReportVersion = "svr-report/1";

/// Runs body(i) for i in [0, n) on up to `workers` threads. Results must be
/// written to per-index slots; the first exception is rethrown.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body) {
  const auto threads = static_cast<std::size_t>(std::clamp(workers, 1, 256));
  if (threads == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(threads, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Statistics

struct Stats {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};

/// Median and p95 use linear interpolation between order statistics.
[[nodiscard]] inline Stats summarize(std::vector<double> v) {
  Stats s;
  s.count = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  s.median = quantile(0.5);
  s.p95 = quantile(0.95);
  s.max = v.back();
  return s;
}

inline Json stats_json(const Stats& s) {
  if (s.count == 0) return {{"count", 0}, {"mean", nullptr}, {"median", nullptr}, {"p95", nullptr}, {"max", nullptr}};
  return {{"count", s.count}, {"mean", s.mean}, {"median", s.median}, {"p95", s.p95}, {"max", s.max}};
}

// ---------------------------------------------------------------------------
// Colocation

struct ColocateConfig {
  std::string label = "colocate";
  double colocation_rate_hz = 0.0;  // 0: use the dataset's scenario rate
  SolverConfig solver;
  ImuNoiseParams imu_noise;
  double anchor_var = 1e-9;
  MatchingErrorConfig metric;
  double metric_noise_factor = 4.0;  // plane_tol = max(1e-9, factor * lidar noise)
  double assoc_noise_factor = 4.0;   // > 0: plane_fit_tol = max(1e-6, factor * lidar noise)

  ColocateConfig() {
    solver.planar = true;
    solver.assoc.feature_stride = 2;
    metric.stride = 3;
  }
};

struct ColocateFrame {
  int index = 0;
  double t = 0.0;
  bool colocated = false;
  bool solved = false;  // PAM ran (false on degenerate association)
  bool converged = false;
  bool diverged = false;
  int alternations = 0;
  std::vector<double> objective_trace;
  std::optional<double> matching_error_m;
  std::size_t used = 0;
  std::size_t excluded = 0;
  double position_error_m = 0.0;
  double ext_error_m = 0.0;
  double ext_error_rad = 0.0;
  double twin_error_m = 0.0;  // estimated vs true virtual pose
  std::string note;
};

struct ColocateRun {
  ColocateConfig config;
  double effective_rate_hz = 0.0;
  int step = 1;  // lidar frames per colocation
  std::vector<ColocateFrame> frames;
  int warnings = 0;
};

namespace detail {

inline std::span<const ImuSample> imu_window(const std::vector<ImuSample>& imu, double t0, double t1) {
  auto lo = std::lower_bound(imu.begin(), imu.end(), t0,
                             [](const ImuSample& s, double t) { return s.timestamp < t - 1e-12; });
  auto hi = std::lower_bound(lo, imu.end(), t1, [](const ImuSample& s, double t) { return s.timestamp < t - 1e-12; });
  if (lo != imu.begin()) --lo;
  if (hi != imu.end()) ++hi;
  return {&*lo, static_cast<std::size_t>(hi - lo)};
}

inline PropagationResult propagate(const NavState& x, const Covariance& c, const std::vector<ImuSample>& imu,
                                   double t0, double t1, const ImuNoiseParams& noise) {
  if (t1 <= t0) return {x, c};
  const auto slice = slice_imu(imu_window(imu, t0, t1), t0, t1, SliceEndpoints::Nearest);
  return forward_propagate(x, c, slice, t1 - t0, noise);
}

inline LidarScan to_world(const LidarScan& s, const RigidTransform& pose) {
  LidarScan out = s;
  for (auto& p : out.points) p = pose.apply(p);
  return out;
}

inline NavState pose_state(const RigidTransform& pose) {
  NavState x;
  x.p = pose.translation();
  x.q = pose.quaternion();
  return x;
}

inline double rotation_angle(const RigidTransform& t) { return rotation_log(t.rotation()).norm(); }

}  // namespace detail

/// Initialization takes the first frame's true real pose and velocity and the
/// calibrated extrinsics. Colocation runs every `step` lidar frames; frames in
/// between are dead-reckoned from the IMU with the extrinsics held.
[[nodiscard]] inline ColocateRun run_colocation(const DatasetRecord& rec, const ColocateConfig& cfg, int workers = 1) {
  const Scenario& sc = rec.scenario;
  cfg.solver.validate();
  if (rec.lidar.size() < 2) throw Error(ErrorCode::InsufficientData, "colocate: need at least two lidar frames");
  if (rec.imu.empty()) throw Error(ErrorCode::InsufficientData, "colocate: dataset has no IMU samples");

  ColocateRun run;
  run.config = cfg;
  const double rate = cfg.colocation_rate_hz > 0.0 ? cfg.colocation_rate_hz : sc.colocation_rate_hz;
  run.step = std::max(1, static_cast<int>(std::lround(sc.lidar_rate_hz / rate)));
  run.effective_rate_hz = sc.lidar_rate_hz / run.step;

  SolverConfig solver = cfg.solver;
  if (cfg.assoc_noise_factor > 0.0)
    solver.assoc.plane_fit_tol = std::max(1e-6, cfg.assoc_noise_factor * sc.lidar_noise_m);
  MatchingErrorConfig metric = cfg.metric;
  metric.plane_tol = std::max(1e-9, cfg.metric_noise_factor * sc.lidar_noise_m);

  const auto& f0 = rec.lidar.front();
  RigidTransform anchor = f0.real_pose;  // last colocation frame body -> real world
  RigidTransform ext = sc.calibration;   // real world -> virtual world
  NavState x0;
  {
    // Body velocity from the first two frames of truth.
    const auto& f1 = rec.lidar[1];
    const Vec3 dp = f1.real_pose.translation() - f0.real_pose.translation();
    const double half_turn = 0.5 * rotation_log(f0.real_pose.rotation().transpose() * f1.real_pose.rotation()).z();
    const double arc = std::abs(half_turn) > 1e-9 ? half_turn / std::sin(half_turn) : 1.0;
    x0.v = arc * rotation_about_z(-half_turn) * f0.real_pose.rotation().transpose() * (dp / (f1.t - f0.t));
    x0.g = f0.real_pose.rotation().transpose() * Vec3(0.0, 0.0, -kStandardGravity);
  }
  Covariance c0 = Covariance::initial();
  auto reset = reset_to_frame(x0, c0, cfg.anchor_var);
  NavState x_anchor = reset.state;
  Covariance c_anchor = reset.cov;
  FeatureSet anchor_features = extract_features(f0.real, solver.assoc.features);

  std::vector<RigidTransform> world_pose(rec.lidar.size()), ext_at(rec.lidar.size());
  run.frames.resize(rec.lidar.size());
  world_pose[0] = anchor;
  ext_at[0] = ext;
  run.frames[0].index = f0.index;
  run.frames[0].t = f0.t;
  run.frames[0].colocated = true;
  run.frames[0].note = "initialization";

  NavState x = x_anchor;
  Covariance c = c_anchor;
  for (std::size_t i = 1; i < rec.lidar.size(); ++i) {
    const LidarFrame& f = rec.lidar[i];
    ColocateFrame& out = run.frames[i];
    out.index = f.index;
    out.t = f.t;
    auto prop = detail::propagate(x, c, rec.imu, rec.lidar[i - 1].t, f.t, cfg.imu_noise);
    x = prop.state;
    c = prop.cov;

    if (i % static_cast<std::size_t>(run.step) != 0) {
      world_pose[i] = anchor * x.transform();
      ext_at[i] = ext;
      continue;
    }

    out.colocated = true;
    const LidarScan virt_world = detail::to_world(f.virt, f.virtual_pose);
    try {
      const SolveResult r = pam_solve(x, c, f.real, virt_world, anchor_features, ext * anchor, solver);
      out.solved = true;
      out.converged = r.converged;
      out.diverged = r.diverged;
      out.alternations = r.alternations;
      out.objective_trace = r.objective_trace;
      if (r.diverged) {
        ++run.warnings;
        out.note = "solver divergence";
      }
      x = r.posterior_state;
      c = r.posterior_cov;
      ext = r.extrinsics_star * anchor.inverse();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateGeometry && e.code() != ErrorCode::InsufficientData) throw;
      ++run.warnings;
      out.note = e.what();
    }
    anchor = anchor * x.transform();
    world_pose[i] = anchor;
    ext_at[i] = ext;
    reset = reset_to_frame(x, c, cfg.anchor_var);
    x = reset.state;
    c = reset.cov;
    anchor_features = extract_features(f.real, solver.assoc.features);
  }

  parallel_for(rec.lidar.size(), workers, [&](std::size_t i) {
    const LidarFrame& f = rec.lidar[i];
    ColocateFrame& out = run.frames[i];
    out.position_error_m = (world_pose[i].translation() - f.real_pose.translation()).norm();
    const RigidTransform de = ext_at[i].inverse() * f.ext_true;
    out.ext_error_m = de.translation().norm();
    out.ext_error_rad = detail::rotation_angle(de);
    out.twin_error_m = ((ext_at[i] * world_pose[i]).translation() - (f.ext_true * f.real_pose).translation()).norm();
    try {
      const auto me = matching_error(f.real, detail::to_world(f.virt, f.virtual_pose), detail::pose_state(world_pose[i]),
                                     ext_at[i], metric);
      out.matching_error_m = me.mean;
      out.used = me.used;
      out.excluded = me.excluded;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MetricUndefined && e.code() != ErrorCode::InsufficientData) throw;
      if (out.note.empty()) out.note = e.what();
    }
  });
  return run;
}

// ---------------------------------------------------------------------------
// Synthesis

struct FuseConfig {
  std::string label = "fuse";
  MatchNoiseConfig matches;
  bool maaf = true;
  MotionConfig motion;
  double roi_side_px = 64.0;  // 40% of the default image width
  double roi_ref_height_m = -1.0;  // < 0: half the vehicle height
  double shear_gain = 1.0;
  double iou_threshold = 0.5;
  int transfer_stride_px = 4;
  bool write_images = true;

  FuseConfig() { motion.dt = 0.25; }
};

struct FuseFrame {
  int index = 0;
  double t = 0.0;
  bool skipped = false;
  std::string note;
  std::size_t matches = 0;
  std::size_t kept = 0;  // after MAAF
  std::optional<double> object_deviation;
  std::optional<double> reprojection_rms_px;  // estimated vs true warp over ground pixels
  std::optional<double> match_rms_px;         // over the matches used for estimation
  std::optional<bool> recognizable;
  Image augmented;
};

struct FuseRun {
  FuseConfig config;
  std::uint64_t seed = 0;
  std::vector<FuseFrame> frames;
  int skipped = 0;
};

namespace detail {

inline Mask warp_mask(const Mask& m, const PerspectiveTransform& pt, int w, int h) {
  Image img(m.width, m.height, 1, 0);
  for (std::size_t i = 0; i < m.bits.size(); ++i) img.data[i] = m.bits[i] ? 255 : 0;
  const WarpResult r = warp_image(img, pt, w, h);
  Mask out(w, h, 0);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = r.image.data[i] >= 128 ? 1 : 0;
  return out;
}

inline PromptBoxes warp_prompts(const PromptBoxes& p, const PerspectiveTransform& pt, int w, int h) {
  PromptBoxes out;
  for (const auto& b : p.boxes) {
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (const Vec2& c : {Vec2(b.x0, b.y0), Vec2(b.x1, b.y0), Vec2(b.x1, b.y1), Vec2(b.x0, b.y1)}) {
      const Vec3 q = pt.h * Vec3(c.x(), c.y(), 1.0);
      if (q.z() <= 0.0) continue;
      x0 = std::min(x0, q.x() / q.z());
      y0 = std::min(y0, q.y() / q.z());
      x1 = std::max(x1, q.x() / q.z());
      y1 = std::max(y1, q.y() / q.z());
    }
    Box r{static_cast<int>(std::clamp(std::floor(x0), 0.0, double(w))), static_cast<int>(std::clamp(std::floor(y0), 0.0, double(h))),
          static_cast<int>(std::clamp(std::ceil(x1), 0.0, double(w))), static_cast<int>(std::clamp(std::ceil(y1), 0.0, double(h))),
          b.cls};
    if (r.area() > 0) out.boxes.push_back(r);
  }
  return out;
}

}  // namespace detail

/// Motion-aware RoI for a camera frame: predicted positions under the planned
/// actions, projected into the real camera.
[[nodiscard]] inline RoIPolygon frame_roi(const Scenario& sc, const CameraFrame& f, const FuseConfig& cfg) {
  std::vector<Action> plan;
  for (int h = 0; h < cfg.motion.horizon; ++h) plan.push_back(sc.action_at(f.t + h * cfg.motion.dt));
  MotionConfig mc = cfg.motion;
  mc.max_steer = sc.motion.max_steer;
  mc.accel_gain = sc.motion.accel_gain;
  mc.brake_gain = sc.motion.brake_gain;
  const auto states = predict_horizon(f.state, plan, mc);
  const CameraModel cam = sc.camera.model(sc.body_pose(f.state.pose), sc.lidar_height_m);
  const double ref_h = cfg.roi_ref_height_m >= 0.0 ? cfg.roi_ref_height_m : 0.5 * sc.vehicle_height_m;
  const Vec2 o = roi_center(states, cam, ref_h);
  return build_roi_polygon(o, cfg.roi_side_px, shear_from_motion(f.state, states, mc, cfg.shear_gain));
}

/// OD of the obstacle footprint against every visible landmark, all in real
/// pixels; empty when either set is empty or d1 vanishes.
[[nodiscard]] inline std::optional<double> frame_object_deviation(const CameraFrame& f, const PerspectiveTransform& pt) {
  if (f.labels.empty() || f.object_points.empty()) return std::nullopt;
  std::vector<Vec2> labels, virt, synth;
  for (const auto& l : f.labels)
    for (const auto& o : f.object_points) {
      labels.push_back(f.warp.apply(l));
      virt.push_back(f.warp.apply(o));
      synth.push_back(pt.apply(o));
    }
  try {
    return object_deviation(labels, virt, synth);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::MetricUndefined) throw;
  }
  return std::nullopt;
}

[[nodiscard]] inline FuseFrame fuse_frame(const Scenario& sc, const CameraFrame& f, const FuseConfig& cfg,
                                          std::uint64_t seed) {
  FuseFrame out;
  out.index = f.index;
  out.t = f.t;
  const int w = f.real_image.width;
  const int h = f.real_image.height;
  MatchNoiseConfig mc = cfg.matches;
  mc.seed = seed;
  MatchSet ms = provide_matches(f.warp, f.ground, w, h, mc);
  out.matches = ms.size();
  if (cfg.maaf) {
    try {
      ms = maaf_filter(ms, frame_roi(sc, f, cfg));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BehindCamera) throw;
      out.note = "RoI unavailable, matches unfiltered";
    }
  }
  out.kept = ms.size();

  PerspectiveTransform pt;
  try {
    pt = estimate_pt(ms);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientMatches && e.code() != ErrorCode::DegenerateConfiguration) throw;
    out.skipped = true;
    out.note = e.what();
    return out;
  }
  out.match_rms_px = reprojection_rms(pt, ms);

  std::vector<Vec2> ground_px;
  for (int y = 0; y < f.ground.height; y += cfg.transfer_stride_px)
    for (int x = 0; x < f.ground.width; x += cfg.transfer_stride_px)
      if (f.ground.at(x, y)) ground_px.emplace_back(x, y);
  if (!ground_px.empty()) out.reprojection_rms_px = transfer_rms(pt, f.warp, ground_px);

  const Mask warped_obj = detail::warp_mask(f.object, pt, w, h);
  const auto [neg, pos] = masks_from_prompts(detail::warp_prompts(f.prompts, pt, w, h), warped_obj);
  out.augmented = composite(warp_image(f.virtual_image, pt, w, h).image, f.real_image, neg, pos);

  out.object_deviation = frame_object_deviation(f, pt);
  if (f.object.count() > 0) {
    if (const auto gt = mask_bbox(detail::warp_mask(f.object, f.warp, w, h))) {
      out.recognizable = recognizable(ObjectOutcome{*gt, neg}, cfg.iou_threshold);
    }
  }
  return out;
}

[[nodiscard]] inline FuseRun run_fuse(const DatasetRecord& rec, const FuseConfig& cfg, std::uint64_t seed,
                                      int workers = 1) {
  if (rec.camera.empty()) throw Error(ErrorCode::InsufficientData, "fuse: dataset has no camera frames");
  FuseRun run;
  run.config = cfg;
  run.seed = seed;
  run.frames.resize(rec.camera.size());
  parallel_for(rec.camera.size(), workers, [&](std::size_t i) {
    run.frames[i] = fuse_frame(rec.scenario, rec.camera[i], cfg, derive_seed(seed, 5000 + i));
  });
  for (const auto& f : run.frames) run.skipped += f.skipped ? 1 : 0;
  return run;
}

/// Virtual ground pixels whose real-image position lies within `radius_px` of `center`.
[[nodiscard]] inline Mask local_support(const CameraFrame& f, const Vec2& center, double radius_px) {
  Mask m(f.ground.width, f.ground.height, 0);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (f.ground.at(x, y) && (f.warp.apply(Vec2(x, y)) - center).norm() <= radius_px) m.bits[y * m.width + x] = 1;
  return m;
}

struct RegistrationTrial {
  std::size_t matches = 0;
  std::size_t kept = 0;
  std::size_t kept_outliers = 0;  // provider outliers carry scores below 1
  std::size_t support_px = 0;
  std::optional<double> rms_maaf, rms_raw;  // transfer RMS over the support, px
  std::optional<double> od_maaf, od_raw;
};

/// One paired MAAF / unfiltered registration on a camera frame. Correct
/// matches come from the ground patch within `radius_px` of the motion RoI
/// center; outliers are uniform over the frame. Empty when the RoI is
/// unavailable or the patch is smaller than `min_support_px`.
[[nodiscard]] inline std::optional<RegistrationTrial> registration_trial(const Scenario& sc, const CameraFrame& f,
                                                                        const FuseConfig& cfg, double radius_px,
                                                                        std::uint64_t seed,
                                                                        std::size_t min_support_px = 50) {
  RoIPolygon roi;
  try {
    roi = frame_roi(sc, f, cfg);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::BehindCamera) throw;
    return std::nullopt;
  }
  const Mask support = local_support(f, roi.center, radius_px);
  RegistrationTrial t;
  t.support_px = support.count();
  if (t.support_px < min_support_px) return std::nullopt;
  std::vector<Vec2> px;
  for (int y = 0; y < support.height; ++y)
    for (int x = 0; x < support.width; ++x)
      if (support.at(x, y)) px.emplace_back(x, y);

  MatchNoiseConfig mc = cfg.matches;
  mc.seed = seed;
  const MatchSet all = provide_matches(f.warp, support, f.real_image.width, f.real_image.height, mc);
  const MatchSet kept = maaf_filter(all, roi);
  t.matches = all.size();
  t.kept = kept.size();
  for (const auto& m : kept.pairs) t.kept_outliers += m.score < 1.0 ? 1 : 0;
  auto solve = [&](const MatchSet& ms, std::optional<double>& rms, std::optional<double>& od) {
    try {
      const PerspectiveTransform pt = estimate_pt(ms);
      rms = transfer_rms(pt, f.warp, px);
      od = frame_object_deviation(f, pt);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientMatches && e.code() != ErrorCode::DegenerateConfiguration) throw;
    }
  };
  solve(kept, t.rms_maaf, t.od_maaf);
  solve(all, t.rms_raw, t.od_raw);
  return t;
}

struct GapSample {
  double t = 0.0;
  double gap_real = 0.0;     // obstacle to the real vehicle placed through the calibration
  double gap_virtual = 0.0;  // obstacle to the rendered twin
  [[nodiscard]] double discrepancy() const { return std::abs(gap_virtual - gap_real); }
};

/// Planar center distances to the virtual obstacle at every lidar frame.
[[nodiscard]] inline std::vector<GapSample> obstacle_gaps(const DatasetRecord& rec) {
  const Scenario& sc = rec.scenario;
  if (!sc.obstacle.enabled) throw Error(ErrorCode::InvalidArgument, "obstacle_gaps: scenario has no obstacle");
  std::vector<GapSample> out;
  for (const auto& f : rec.lidar) {
    const Pose2D o = sc.obstacle.pose_at(f.t);
    const Vec2 c(o.x, o.y);
    const Vec3 real = (sc.calibration * f.real_pose).translation();
    const Vec3 twin = f.virtual_pose.translation();
    out.push_back({f.t, (real.head<2>() - c).norm(), (twin.head<2>() - c).norm()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

[[nodiscard]] inline Json colocate_config_json(const ColocateConfig& c) {
  const auto& s = c.solver;
  return {{"label", c.label},
          {"colocation_rate_hz", c.colocation_rate_hz},
          {"solver",
           {{"rho", s.rho},
            {"max_alternations", s.max_alternations},
            {"inner_gauss_newton_iters", s.inner_gauss_newton_iters},
            {"convergence_tol", s.convergence_tol},
            {"early_stop", s.early_stop},
            {"reassociate", s.reassociate},
            {"planar", s.planar},
            {"lidar_sigma_m", s.lidar_sigma},
            {"knn", s.assoc.knn},
            {"max_nn_dist_m", s.assoc.max_nn_dist},
            {"plane_fit_tol_m", s.assoc.plane_fit_tol},
            {"vr_gate_m", s.assoc.vr_gate},
            {"vr_stride", s.assoc.vr_stride},
            {"feature_stride", s.assoc.feature_stride}}},
          {"imu_noise",
           {{"accel_noise", c.imu_noise.accel_noise},
            {"gyro_noise", c.imu_noise.gyro_noise},
            {"accel_bias_walk", c.imu_noise.accel_bias_walk},
            {"gyro_bias_walk", c.imu_noise.gyro_bias_walk}}},
          {"anchor_var", c.anchor_var},
          {"assoc_noise_factor", c.assoc_noise_factor},
          {"metric",
           {{"knn", c.metric.knn},
            {"max_nn_dist_m", c.metric.max_nn_dist},
            {"min_plane_spread_m", c.metric.min_plane_spread},
            {"stride", c.metric.stride},
            {"noise_factor", c.metric_noise_factor}}}};
}

[[nodiscard]] inline ColocateConfig colocate_config_from_json(const Json& j) {
  using detail::read_opt;
  ColocateConfig c;
  if (!j.is_object()) throw Error(ErrorCode::Config, "colocate config must be a JSON object");
  c.label = read_opt<std::string>(j, "label", c.label, "");
  c.colocation_rate_hz = read_opt(j, "colocation_rate_hz", c.colocation_rate_hz, "");
  if (const Json* s = detail::find(j, "solver")) {
    auto& v = c.solver;
    const std::string at = "solver.";
    v.rho = read_opt(*s, "rho", v.rho, at);
    v.max_alternations = read_opt(*s, "max_alternations", v.max_alternations, at);
    v.inner_gauss_newton_iters = read_opt(*s, "inner_gauss_newton_iters", v.inner_gauss_newton_iters, at);
    v.convergence_tol = read_opt(*s, "convergence_tol", v.convergence_tol, at);
    v.early_stop = read_opt(*s, "early_stop", v.early_stop, at);
    v.reassociate = read_opt(*s, "reassociate", v.reassociate, at);
    v.planar = read_opt(*s, "planar", v.planar, at);
    v.lidar_sigma = read_opt(*s, "lidar_sigma_m", v.lidar_sigma, at);
    v.assoc.knn = read_opt(*s, "knn", v.assoc.knn, at);
    v.assoc.max_nn_dist = read_opt(*s, "max_nn_dist_m", v.assoc.max_nn_dist, at);
    v.assoc.plane_fit_tol = read_opt(*s, "plane_fit_tol_m", v.assoc.plane_fit_tol, at);
    v.assoc.vr_gate = read_opt(*s, "vr_gate_m", v.assoc.vr_gate, at);
    v.assoc.vr_stride = read_opt(*s, "vr_stride", v.assoc.vr_stride, at);
    v.assoc.feature_stride = read_opt(*s, "feature_stride", v.assoc.feature_stride, at);
  }
  if (const Json* n = detail::find(j, "imu_noise")) {
    const std::string at = "imu_noise.";
    c.imu_noise.accel_noise = read_opt(*n, "accel_noise", c.imu_noise.accel_noise, at);
    c.imu_noise.gyro_noise = read_opt(*n, "gyro_noise", c.imu_noise.gyro_noise, at);
    c.imu_noise.accel_bias_walk = read_opt(*n, "accel_bias_walk", c.imu_noise.accel_bias_walk, at);
    c.imu_noise.gyro_bias_walk = read_opt(*n, "gyro_bias_walk", c.imu_noise.gyro_bias_walk, at);
  }
  c.anchor_var = read_opt(j, "anchor_var", c.anchor_var, "");
  c.assoc_noise_factor = read_opt(j, "assoc_noise_factor", c.assoc_noise_factor, "");
  if (const Json* m = detail::find(j, "metric")) {
    const std::string at = "metric.";
    c.metric.knn = read_opt(*m, "knn", c.metric.knn, at);
    c.metric.max_nn_dist = read_opt(*m, "max_nn_dist_m", c.metric.max_nn_dist, at);
    c.metric.min_plane_spread = read_opt(*m, "min_plane_spread_m", c.metric.min_plane_spread, at);
    c.metric.stride = read_opt(*m, "stride", c.metric.stride, at);
    c.metric_noise_factor = read_opt(*m, "noise_factor", c.metric_noise_factor, at);
  }
  if (c.colocation_rate_hz < 0.0) throw Error(ErrorCode::Config, "field 'colocation_rate_hz' must be >= 0");
  try {
    c.solver.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
  return c;
}

[[nodiscard]] inline Json fuse_config_json(const FuseConfig& c) {
  return {{"label", c.label},
          {"matches",
           {{"count", c.matches.count}, {"jitter_px", c.matches.jitter_px}, {"outlier_fraction", c.matches.outlier_fraction}}},
          {"maaf", c.maaf},
          {"horizon", c.motion.horizon},
          {"dt_s", c.motion.dt},
          {"roi_side_px", c.roi_side_px},
          {"roi_ref_height_m", c.roi_ref_height_m},
          {"shear_gain", c.shear_gain},
          {"iou_threshold", c.iou_threshold},
          {"transfer_stride_px", c.transfer_stride_px},
          {"write_images", c.write_images}};
}

[[nodiscard]] inline FuseConfig fuse_config_from_json(const Json& j) {
  using detail::read_opt;
  FuseConfig c;
  if (!j.is_object()) throw Error(ErrorCode::Config, "fuse config must be a JSON object");
  c.label = read_opt<std::string>(j, "label", c.label, "");
  if (const Json* m = detail::find(j, "matches")) {
    c.matches.count = read_opt(*m, "count", c.matches.count, "matches.");
    c.matches.jitter_px = read_opt(*m, "jitter_px", c.matches.jitter_px, "matches.");
    c.matches.outlier_fraction = read_opt(*m, "outlier_fraction", c.matches.outlier_fraction, "matches.");
  }
  c.maaf = read_opt(j, "maaf", c.maaf, "");
  c.motion.horizon = read_opt(j, "horizon", c.motion.horizon, "");
  c.motion.dt = read_opt(j, "dt_s", c.motion.dt, "");
  c.roi_side_px = read_opt(j, "roi_side_px", c.roi_side_px, "");
  c.roi_ref_height_m = read_opt(j, "roi_ref_height_m", c.roi_ref_height_m, "");
  c.shear_gain = read_opt(j, "shear_gain", c.shear_gain, "");
  c.iou_threshold = read_opt(j, "iou_threshold", c.iou_threshold, "");
  c.transfer_stride_px = read_opt(j, "transfer_stride_px", c.transfer_stride_px, "");
  c.write_images = read_opt(j, "write_images", c.write_images, "");
  if (c.matches.count < 0 || c.matches.jitter_px < 0.0 || c.matches.outlier_fraction < 0.0 ||
      c.matches.outlier_fraction > 1.0)
    throw Error(ErrorCode::Config, "field 'matches' has out-of-range values");
  if (c.motion.horizon < 1 || !(c.motion.dt > 0.0) || !(c.roi_side_px > 0.0) || c.transfer_stride_px < 1)
    throw Error(ErrorCode::Config, "horizon, dt_s, roi_side_px and transfer_stride_px must be positive");
  return c;
}

/// Aggregates derived from the per-frame array; recomputed and compared on load.
[[nodiscard]] inline Json report_aggregates(const Json& frames) {
  std::vector<double> me, alt, od, rms, pos;
  long rec_ok = 0, rec_n = 0, skipped = 0, diverged = 0, od_lt5 = 0, od_gt10 = 0;
  for (const auto& f : frames) {
    if (f.contains("matching_error_m") && !f["matching_error_m"].is_null()) me.push_back(f["matching_error_m"].get<double>());
    if (f.value("colocated", false) && f.value("solved", false)) alt.push_back(f["alternations"].get<int>());
    if (f.contains("position_error_m")) pos.push_back(f["position_error_m"].get<double>());
    if (f.value("diverged", false)) ++diverged;
    if (f.value("skipped", false)) ++skipped;
    if (f.contains("object_deviation") && !f["object_deviation"].is_null()) {
      const double v = f["object_deviation"].get<double>();
      od.push_back(v);
      od_lt5 += v < 0.05 ? 1 : 0;
      od_gt10 += v > 0.10 ? 1 : 0;
    }
    if (f.contains("reprojection_rms_px") && !f["reprojection_rms_px"].is_null())
      rms.push_back(f["reprojection_rms_px"].get<double>());
    if (f.contains("recognizable") && !f["recognizable"].is_null()) {
      ++rec_n;
      rec_ok += f["recognizable"].get<bool>() ? 1 : 0;
    }
  }
  Json a = {{"frames", frames.size()}, {"skipped", skipped}, {"diverged", diverged}};
  a["matching_error_m"] = stats_json(summarize(me));
  a["alternations"] = stats_json(summarize(alt));
  a["position_error_m"] = stats_json(summarize(pos));
  a["object_deviation"] = stats_json(summarize(od));
  a["reprojection_rms_px"] = stats_json(summarize(rms));
  a["od_below_5pct"] = od.empty() ? Json(nullptr) : Json(static_cast<double>(od_lt5) / od.size());
  a["od_above_10pct"] = od.empty() ? Json(nullptr) : Json(static_cast<double>(od_gt10) / od.size());
  a["r_rate"] = rec_n == 0 ? Json(nullptr) : Json(static_cast<double>(rec_ok) / rec_n);
  return a;
}

[[nodiscard]] inline Json colocate_report(const ColocateRun& run, const DatasetRecord& rec) {
  Json frames = Json::array();
  for (const auto& f : run.frames) {
    frames.push_back({{"frame", f.index},
                      {"t_s", f.t},
                      {"colocated", f.colocated},
                      {"solved", f.solved},
                      {"converged", f.converged},
                      {"diverged", f.diverged},
                      {"alternations", f.alternations},
                      {"objective_trace", f.objective_trace},
                      {"matching_error_m", opt_json(f.matching_error_m)},
                      {"used_points", f.used},
                      {"excluded_points", f.excluded},
                      {"position_error_m", f.position_error_m},
                      {"ext_error_m", f.ext_error_m},
                      {"ext_error_rad", f.ext_error_rad},
                      {"twin_error_m", f.twin_error_m},
                      {"note", f.note}});
  }
  Json r = {{"format", kReportVersion},
            {"kind", "colocate"},
            {"label", run.config.label},
            {"seed", rec.scenario.seed},
            {"config", colocate_config_json(run.config)},
            {"scenario", scenario_to_json(rec.scenario)},
            {"effective_colocation_rate_hz", run.effective_rate_hz},
            {"warnings", run.warnings},
            {"frames", frames}};
  r["aggregates"] = report_aggregates(frames);
  return r;
}

[[nodiscard]] inline Json fuse_report(const FuseRun& run, const DatasetRecord& rec) {
  Json frames = Json::array();
  for (const auto& f : run.frames) {
    frames.push_back({{"frame", f.index},
                      {"t_s", f.t},
                      {"skipped", f.skipped},
                      {"matches", f.matches},
                      {"kept", f.kept},
                      {"object_deviation", opt_json(f.object_deviation)},
                      {"reprojection_rms_px", opt_json(f.reprojection_rms_px)},
                      {"match_rms_px", opt_json(f.match_rms_px)},
                      {"recognizable", f.recognizable ? Json(*f.recognizable) : Json(nullptr)},
                      {"note", f.note}});
  }
  Json r = {{"format", kReportVersion},
            {"kind", "fuse"},
            {"label", run.config.label},
            {"seed", run.seed},
            {"config", fuse_config_json(run.config)},
            {"scenario", scenario_to_json(rec.scenario)},
            {"frames", frames}};
  r["aggregates"] = report_aggregates(frames);
  return r;
}

/// Validates version and aggregates of a loaded report.
inline void check_report(const Json& r, const std::string& name) {
  if (!r.is_object() || r.value("format", std::string()) != kReportVersion)
    throw Error(ErrorCode::UnsupportedVersion, name + ": unsupported report format");
  if (!r.contains("frames") || !r.contains("aggregates"))
    throw Error(ErrorCode::Config, name + ": report lacks frames or aggregates");
  if (report_aggregates(r["frames"]) != r["aggregates"])
    throw Error(ErrorCode::Config, name + ": aggregates do not match the per-frame values");
}

[[nodiscard]] inline Json load_report(const std::string& path) {
  Json r = read_json_file(path);
  check_report(r, path);
  return r;
}

/// Colocation CSV: frame, matching error, alternations.
[[nodiscard]] inline std::string colocate_csv(const Json& report) {
  std::ostringstream out;
  out.precision(17);
  out << "frame,matching_error_m,alternations\n";
  for (const auto& f : report.at("frames")) {
    out << f.at("frame").get<int>() << ',';
    if (!f.at("matching_error_m").is_null()) out << f.at("matching_error_m").get<double>();
    out << ',' << f.at("alternations").get<int>() << '\n';
  }
  return out.str();
}

struct TableRow {
  std::string report;
  std::string label;
  std::string kind;
  std::size_t frames = 0;
  std::optional<double> mean_od;
  std::optional<double> od_below_5pct;
  std::optional<double> od_above_10pct;
  std::optional<double> r_rate;
  std::optional<double> mean_matching_error_m;
};

[[nodiscard]] inline TableRow table_row(const Json& report, const std::string& name) {
  const Json& a = report.at("aggregates");
  auto opt = [](const Json& v) { return v.is_null() ? std::optional<double>{} : std::optional<double>(v.get<double>()); };
  TableRow row;
  row.report = name;
  row.label = report.value("label", std::string());
  row.kind = report.value("kind", std::string());
  row.frames = a.at("frames").get<std::size_t>();
  row.mean_od = opt(a.at("object_deviation").at("mean"));
  row.od_below_5pct = opt(a.at("od_below_5pct"));
  row.od_above_10pct = opt(a.at("od_above_10pct"));
  row.r_rate = opt(a.at("r_rate"));
  row.mean_matching_error_m = opt(a.at("matching_error_m").at("mean"));
  return row;
}

namespace detail {

inline std::string cell(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream s;
  s.precision(17);
  s << *v;
  return s.str();
}

}  // namespace detail

[[nodiscard]] inline std::string table_csv(const std::vector<TableRow>& rows) {
  std::ostringstream out;
  out << "report,label,kind,frames,mean_od,od_below_5pct,od_above_10pct,r_rate,mean_matching_error_m\n";
  for (const auto& r : rows)
    out << r.report << ',' << r.label << ',' << r.kind << ',' << r.frames << ',' << detail::cell(r.mean_od) << ','
        << detail::cell(r.od_below_5pct) << ',' << detail::cell(r.od_above_10pct) << ',' << detail::cell(r.r_rate)
        << ',' << detail::cell(r.mean_matching_error_m) << '\n';
  return out.str();
}

[[nodiscard]] inline std::string table_markdown(const std::vector<TableRow>& rows) {
  std::ostringstream out;
  out << "| report | label | kind | frames | mean OD | OD < 5% | OD > 10% | R-Rate | mean matching error (m) |\n"
      << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows)
    out << "| " << r.report << " | " << r.label << " | " << r.kind << " | " << r.frames << " | "
        << detail::cell(r.mean_od) << " | " << detail::cell(r.od_below_5pct) << " | "
        << detail::cell(r.od_above_10pct) << " | " << detail::cell(r.r_rate) << " | "
        << detail::cell(r.mean_matching_error_m) << " |\n";
  return out.str();
}

}  // namespace svr
