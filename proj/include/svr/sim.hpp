#pragma once

// Twin-world scenario runner: scripted vehicle motion, paired sensor streams
// for the real and virtual worlds, and drift injection between them.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "svr/eskf.hpp"
#include "svr/motion.hpp"
#include "svr/world.hpp"

namespace svr {

inline constexpr const char* kRecordVersion = "svr-record/1";

// ---------------------------------------------------------------------------
// Drift

struct DriftModel {
  RigidTransform perturbation;  // applied on top of the calibrated extrinsics
  double walk_sigma_m = 0.0;    // per step
  double walk_sigma_rad = 0.0;  // per step
  double step_s = 0.1;
  double latency_s = 0.0;
  bool planar = true;  // walk in yaw + xy only

  void validate() const {
    if (walk_sigma_m < 0.0 || walk_sigma_rad < 0.0) throw Error(ErrorCode::Config, "drift: sigmas must be >= 0");
    if (latency_s < 0.0) throw Error(ErrorCode::Config, "drift: latency must be >= 0");
    if (!(step_s > 0.0)) throw Error(ErrorCode::Config, "drift: step_s must be positive");
  }

  [[nodiscard]] bool has_perturbation() const {
    return perturbation.rotation() != Mat3::Identity() || perturbation.translation() != Vec3::Zero();
  }
};

/// Random walk of the inter-world relation, one increment per step_s,
/// extended lazily and cached.
class DriftProcess {
 public:
  DriftProcess(const DriftModel& model, std::uint64_t seed) : model_(model), rng_(derive_seed(seed, 0xd1f7)) {
    model_.validate();
    walk_.push_back(RigidTransform());
  }

  /// Increments applied by time t (steps completed at or before t).
  [[nodiscard]] int steps_at(double t) const {
    if (t <= 0.0) return 0;
    return static_cast<int>(std::floor(t / model_.step_s + 1e-9));
  }

  const RigidTransform& walk_at(double t) {
    const int n = steps_at(t);
    while (static_cast<int>(walk_.size()) <= n) walk_.push_back(step() * walk_.back());
    return walk_[n];
  }

  /// True extrinsics at t: perturbation * walk(t - latency) * calibrated.
  RigidTransform apply(const RigidTransform& calibrated, double t) {
    if (model_.walk_sigma_m == 0.0 && model_.walk_sigma_rad == 0.0 && !model_.has_perturbation()) return calibrated;
    return model_.perturbation * walk_at(t - model_.latency_s) * calibrated;
  }

  [[nodiscard]] const DriftModel& model() const { return model_; }

 private:
  RigidTransform step() {
    const double sm = model_.walk_sigma_m;
    const double sr = model_.walk_sigma_rad;
    if (model_.planar) {
      const double dx = rng_.normal(sm), dy = rng_.normal(sm), dyaw = rng_.normal(sr);
      return RigidTransform::planar(dyaw, dx, dy);
    }
    Vec3 dt, dr;
    for (int i = 0; i < 3; ++i) dt(i) = rng_.normal(sm);
    for (int i = 0; i < 3; ++i) dr(i) = rng_.normal(sr);
    return {rotation_exp(dr), dt};
  }

  DriftModel model_;
  Rng rng_;
  std::vector<RigidTransform> walk_;
};

[[nodiscard]] inline RigidTransform inject_drift(const RigidTransform& true_ext, const DriftModel& drift, double t,
                                                 std::uint64_t seed) {
  DriftProcess p(drift, seed);
  return p.apply(true_ext, t);
}

// ---------------------------------------------------------------------------
// IMU

struct TrajectorySample {
  RigidTransform pose;            // body -> world
  Vec3 accel = Vec3::Zero();      // world frame, kinematic
  Vec3 omega_body = Vec3::Zero();  // body frame
};

struct ImuSimConfig {
  double accel_noise = 0.0;  // per-sample std, m/s^2
  double gyro_noise = 0.0;   // per-sample std, rad/s
  Vec3 accel_bias = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
};

/// Samples at t0 + k / rate for k = 0 .. floor((t1 - t0) * rate).
[[nodiscard]] inline std::vector<ImuSample> generate_imu(const std::function<TrajectorySample(double)>& traj, double t0,
                                                         double t1, double rate, const ImuSimConfig& cfg,
                                                         std::uint64_t seed, const Vec3& gravity = Vec3(0, 0, -kStandardGravity)) {
  if (!(rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "generate_imu: rate must be positive");
  Rng rng(seed);
  std::vector<ImuSample> out;
  const auto n = static_cast<long>(std::floor((t1 - t0) * rate + 1e-9));
  for (long k = 0; k <= n; ++k) {
    const double t = t0 + static_cast<double>(k) / rate;
    const TrajectorySample s = traj(t);
    const Mat3 rt = s.pose.rotation().transpose();
    ImuSample m;
    m.timestamp = t;
    m.accel = rt * (s.accel - gravity) + cfg.accel_bias;
    m.gyro = s.omega_body + cfg.gyro_bias;
    for (int i = 0; i < 3; ++i) m.accel(i) += rng.normal(cfg.accel_noise);
    for (int i = 0; i < 3; ++i) m.gyro(i) += rng.normal(cfg.gyro_noise);
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario

struct TimedAction {
  double t = 0.0;
  Action action;
  friend bool operator==(const TimedAction&, const TimedAction&) = default;
};

/// Unicycle obstacle living in the virtual world only.
struct ObstacleSpec {
  bool enabled = false;
  Pose2D pose0;
  double speed = 0.0;     // m/s
  double yaw_rate = 0.0;  // rad/s
  Vec3 size = Vec3(0.4, 0.25, 0.2);  // length, width, height

  [[nodiscard]] Pose2D pose_at(double t) const {
    if (std::abs(yaw_rate) < 1e-12) {
      return {pose0.x + speed * t * std::cos(pose0.theta), pose0.y + speed * t * std::sin(pose0.theta), pose0.theta};
    }
    const double th = pose0.theta + yaw_rate * t;
    const double r = speed / yaw_rate;
    return {pose0.x + r * (std::sin(th) - std::sin(pose0.theta)), pose0.y - r * (std::cos(th) - std::cos(pose0.theta)),
            th};
  }

  [[nodiscard]] OrientedBox box_at(double t) const {
    const Pose2D p = pose_at(t);
    return {RigidTransform::planar(p.theta, p.x, p.y, 0.5 * size.z()), 0.5 * size, SurfaceClass::Obstacle};
  }
};

struct CameraMount {
  int width = 160;
  int height = 120;
  double fx = 120.0;
  double fy = 120.0;
  double height_m = 0.25;   // above ground
  double forward_m = 0.1;   // ahead of the lidar
  double pitch_rad = 5.0 * kPi / 180.0;  // down

  /// Camera -> body transform for a body frame at `body_height`.
  [[nodiscard]] RigidTransform camera_to_body(double body_height) const {
    Mat3 axes;  // camera x right, y down, z forward
    axes << 0, -1, 0, 0, 0, -1, 1, 0, 0;
    const Mat3 r = Eigen::AngleAxisd(pitch_rad, Vec3::UnitX()).toRotationMatrix() * axes;  // body -> camera
    return {r.transpose(), Vec3(forward_m, 0.0, height_m - body_height)};
  }

  [[nodiscard]] CameraModel model(const RigidTransform& body_pose, double body_height) const {
    const RigidTransform world_to_cam = (body_pose * camera_to_body(body_height)).inverse();
    return CameraModel(fx, fy, 0.5 * (width - 1), 0.5 * (height - 1), world_to_cam, width, height);
  }
};

struct Scenario {
  WorldModel world;
  double bounds_m = 3.8;  // |x|, |y| limit for the vehicle
  std::vector<TimedAction> actions;
  double lidar_rate_hz = 10.0;
  double imu_rate_hz = 200.0;
  double camera_rate_hz = 20.0;
  double colocation_rate_hz = 10.0;
  double duration_s = 10.0;
  std::uint64_t seed = 0;

  AckermannState vehicle0;
  MotionConfig motion;
  double vehicle_height_m = 0.2;

  LidarPattern lidar;
  double lidar_noise_m = 0.0;
  double lidar_height_m = 0.25;
  ImuSimConfig imu;
  CameraMount camera;
  bool camera_enabled = true;

  DriftModel drift;
  RigidTransform calibration;  // real world -> virtual world at t = 0
  ObstacleSpec obstacle;
  std::vector<Vec3> landmarks;  // ground markers in the virtual world

  void validate() const {
    if (!(lidar_rate_hz > 0.0) || !(imu_rate_hz > 0.0) || !(camera_rate_hz > 0.0) || !(colocation_rate_hz > 0.0))
      throw Error(ErrorCode::Config, "scenario: all rates must be positive");
    if (imu_rate_hz < lidar_rate_hz) throw Error(ErrorCode::Config, "scenario: imu rate below lidar rate");
    if (duration_s < 0.0) throw Error(ErrorCode::Config, "scenario: negative duration");
    if (lidar_noise_m < 0.0) throw Error(ErrorCode::Config, "scenario: negative lidar noise");
    if (!(lidar_height_m > 0.0)) throw Error(ErrorCode::Config, "scenario: lidar height must be positive");
    for (std::size_t i = 1; i < actions.size(); ++i)
      if (!(actions[i].t > actions[i - 1].t)) throw Error(ErrorCode::Config, "scenario: action times must increase");
    motion.validate();
    drift.validate();
    world.validate();
  }

  /// Piecewise-constant script: the last action starting at or before t.
  [[nodiscard]] Action action_at(double t) const {
    Action a;
    for (const auto& ta : actions) {
      if (ta.t > t + 1e-12) break;
      a = ta.action;
    }
    return a;
  }

  [[nodiscard]] RigidTransform body_pose(const Pose2D& p) const {
    return RigidTransform::planar(p.theta, p.x, p.y, lidar_height_m);
  }
};

/// Square room of half-size `half` with walls of height `wall_height`.
[[nodiscard]] inline WorldModel make_room(double half, double wall_height, const std::vector<OrientedBox>& boxes = {}) {
  WorldModel w;
  for (const Vec3& n : {Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0), Vec3(0, -1, 0)}) {
    BoundedPlane p;
    p.normal = n;
    p.offset = half;
    p.center = half * n + Vec3(0, 0, 0.5 * wall_height);
    p.axis_u = Vec3(-n.y(), n.x(), 0.0);
    p.half_u = half;
    p.half_v = 0.5 * wall_height;
    p.cls = SurfaceClass::Wall;
    w.planes.push_back(p);
  }
  w.boxes = boxes;
  return w;
}

/// Four boxes placed away from the room center.
[[nodiscard]] inline std::vector<OrientedBox> default_furniture() {
  return {
      {RigidTransform::planar(0.3, 2.6, 2.4, 0.4), Vec3(0.4, 0.3, 0.4), SurfaceClass::Static},
      {RigidTransform::planar(-0.5, -2.7, 1.8, 0.6), Vec3(0.3, 0.5, 0.6), SurfaceClass::Static},
      {RigidTransform::planar(0.9, 1.2, -2.9, 0.3), Vec3(0.5, 0.25, 0.3), SurfaceClass::Static},
      {RigidTransform::planar(0.0, -2.2, -2.6, 0.5), Vec3(0.35, 0.35, 0.5), SurfaceClass::Static},
  };
}

/// Furnished 8 m room, vehicle circling the center at about 0.8 m/s with a
/// slowly varying steer, and an obstacle ahead on a similar circle.
[[nodiscard]] inline Scenario reference_scenario() {
  Scenario sc;
  sc.world = make_room(4.0, 1.5, default_furniture());
  sc.vehicle0.pose = Pose2D(0.0, -1.5, 0.0);
  sc.vehicle0.speed = 0.8;
  const double base = std::atan(sc.vehicle0.wheelbase / 1.5);
  for (int i = 0; i < 12; ++i) sc.actions.push_back({2.5 * i, Action{base * (1.0 + 0.25 * std::sin(0.9 * i)), 0.0, 0.0}});
  sc.lidar_noise_m = 0.005;
  sc.imu.accel_noise = 0.02;
  sc.imu.gyro_noise = 0.002;
  sc.obstacle.enabled = true;
  sc.obstacle.pose0 = Pose2D(1.5 * std::sin(1.0), -1.5 * std::cos(1.0), 1.0);
  sc.obstacle.speed = 0.8;
  sc.obstacle.yaw_rate = 0.8 / 1.5;
  for (int i = -3; i <= 3; ++i)
    for (int j = -3; j <= 3; ++j) sc.landmarks.emplace_back(0.9 * i, 0.9 * j, 0.0);
  sc.drift.step_s = 1.0 / sc.lidar_rate_hz;
  return sc;
}

/// Reference scenario for colocation-rate sweeps: 50 Hz lidar so every rate
/// in {5, 10, 25, 50} Hz lands on a scan, and a random walk of the
/// inter-world extrinsics per scan.
[[nodiscard]] inline Scenario drifting_scenario() {
  Scenario sc = reference_scenario();
  sc.lidar_rate_hz = 50.0;
  sc.colocation_rate_hz = 50.0;
  sc.drift.step_s = 1.0 / sc.lidar_rate_hz;
  sc.drift.walk_sigma_m = 0.003;
  sc.drift.walk_sigma_rad = 0.002;
  return sc;
}

// ---------------------------------------------------------------------------
// Record

struct LidarFrame {
  int index = 0;
  double t = 0.0;
  RigidTransform real_pose;     // real body -> real world
  RigidTransform virtual_pose;  // virtual body -> virtual world
  RigidTransform ext_true;      // real world -> virtual world
  LidarScan real;               // real sensor frame
  LidarScan virt;               // virtual sensor frame
  friend bool operator==(const LidarFrame&, const LidarFrame&) = default;
};

struct CameraFrame {
  int index = 0;
  double t = 0.0;
  AckermannState state;  // real vehicle
  RigidTransform ext_true;
  Image real_image;
  Image virtual_image;
  Mask object;  // virtual image
  Mask ground;  // virtual image
  PromptBoxes prompts;
  PerspectiveTransform warp;   // virtual -> real pixels on the ground plane
  std::vector<Vec2> labels;     // virtual px of landmarks visible in both views
  std::vector<Vec2> object_points;  // virtual px of the obstacle footprint corners
  friend bool operator==(const CameraFrame&, const CameraFrame&) = default;
};

struct DatasetRecord {
  std::string version = kRecordVersion;
  Scenario scenario;
  std::vector<ImuSample> imu;
  std::vector<LidarFrame> lidar;
  std::vector<CameraFrame> camera;
  bool complete = true;
};

class ScenarioAbortError : public Error {
 public:
  ScenarioAbortError(const std::string& what, DatasetRecord partial)
      : Error(ErrorCode::ScenarioAbort, what), partial_(std::move(partial)) {}
  [[nodiscard]] const DatasetRecord& partial() const { return partial_; }

 private:
  DatasetRecord partial_;
};

// ---------------------------------------------------------------------------
// Runner

/// Real vehicle states on the IMU grid, folded through ackermann_step.
class TruthRollout {
 public:
  TruthRollout(const Scenario& sc) : sc_(sc), dt_(1.0 / sc.imu_rate_hz) { states_.push_back(sc.vehicle0); }

  /// State at tick k, extending the rollout as needed.
  const AckermannState& tick(long k) {
    while (static_cast<long>(states_.size()) <= k) {
      const long j = static_cast<long>(states_.size()) - 1;
      states_.push_back(ackermann_step(states_.back(), sc_.action_at(j * dt_), dt_, sc_.motion));
    }
    return states_[k];
  }

  /// State at an arbitrary time: the tick at or before t advanced by a partial step.
  AckermannState at(double t) {
    if (t <= 0.0) return sc_.vehicle0;
    const long k = static_cast<long>(std::floor(t / dt_ + 1e-9));
    const double rem = t - k * dt_;
    const AckermannState& s = tick(k);
    if (rem <= 1e-12) return s;
    return ackermann_step(s, sc_.action_at(k * dt_), rem, sc_.motion);
  }

  [[nodiscard]] double dt() const { return dt_; }

 private:
  const Scenario& sc_;
  double dt_;
  std::vector<AckermannState> states_;
};

/// Kinematic derivatives of the bicycle state under action `a`, evaluated
/// `tau` seconds into the Euler step that starts at `s`. The body turns at the
/// step's yaw rate while the position moves along the step's heading, so the
/// acceleration keeps that heading.
[[nodiscard]] inline TrajectorySample bicycle_sample(const Scenario& sc, const AckermannState& s, const Action& action,
                                                     double tau = 0.0) {
  const Action a = clamp_action(action, sc.motion.max_steer);
  double acc = sc.motion.accel_gain * a.throttle - sc.motion.brake_gain * a.brake;
  if (s.speed <= 0.0 && acc < 0.0) acc = 0.0;
  const double omega = s.speed * std::tan(a.steer) / s.wheelbase;
  const double speed = std::max(0.0, s.speed + acc * tau);
  Pose2D p = s.pose;
  p.x += s.speed * std::cos(p.theta) * tau;
  p.y += s.speed * std::sin(p.theta) * tau;
  const Vec3 fwd(std::cos(p.theta), std::sin(p.theta), 0.0);
  p.theta += omega * tau;
  const Vec3 left(-fwd.y(), fwd.x(), 0.0);
  return {sc.body_pose(p), acc * fwd + speed * omega * left, Vec3(0, 0, omega)};
}

namespace detail {

inline int lidar_frame_count(const Scenario& sc) {
  return static_cast<int>(std::floor(sc.duration_s * sc.lidar_rate_hz + 1e-9));
}
inline int camera_frame_count(const Scenario& sc) {
  return sc.camera_enabled ? static_cast<int>(std::floor(sc.duration_s * sc.camera_rate_hz + 1e-9)) : 0;
}

/// Virtual geometry expressed in real-world coordinates at true extrinsics `e`.
inline WorldModel virtual_world_in_real(const Scenario& sc, const RigidTransform& e, double t) {
  WorldModel w = sc.world;
  if (sc.obstacle.enabled) {
    OrientedBox b = sc.obstacle.box_at(t);
    b.pose = e.inverse() * b.pose;
    w.boxes.push_back(b);
  }
  return w;
}

inline void check_bounds(const Scenario& sc, const AckermannState& s, double t) {
  if (std::abs(s.pose.x) > sc.bounds_m || std::abs(s.pose.y) > sc.bounds_m)
    throw Error(ErrorCode::ScenarioAbort, "vehicle left the world bounds at t=" + std::to_string(t));
}

}  // namespace detail

[[nodiscard]] inline CameraFrame make_camera_frame(const Scenario& sc, int index, double t, const AckermannState& real,
                                                   const AckermannState& twin, const RigidTransform& e) {
  CameraFrame f;
  f.index = index;
  f.t = t;
  f.state = real;
  f.ext_true = e;
  const CameraModel cam_r = sc.camera.model(sc.body_pose(real.pose), sc.lidar_height_m);
  // Virtual camera at the twin pose, expressed in real-world coordinates.
  const CameraModel cam_v = sc.camera.model(sc.body_pose(twin.pose), sc.lidar_height_m);
  const WorldModel vw = detail::virtual_world_in_real(sc, e, t);
  RenderResult rv = render_frame(vw, cam_v, &cam_r);
  RenderResult rr = render_frame(sc.world, cam_r);
  f.real_image = std::move(rr.image);
  f.virtual_image = std::move(rv.image);
  f.object = std::move(rv.object);
  f.ground = std::move(rv.ground);
  f.prompts = std::move(rv.prompts);
  f.warp = *rv.warp;

  auto in_view = [](const CameraModel& c, const Vec3& p, Vec2& px) {
    const Vec3 pc = c.pose.apply(p);
    if (pc.z() <= 1e-6) return false;
    px = project_camera_point(c, pc);
    return px.x() >= 0 && px.y() >= 0 && px.x() <= c.width - 1 && px.y() <= c.height - 1;
  };
  const RigidTransform einv = e.inverse();
  for (const auto& lm : sc.landmarks) {
    const Vec3 p = einv.apply(lm);
    Vec2 a, b;
    if (in_view(cam_v, p, a) && in_view(cam_r, p, b)) f.labels.push_back(a);
  }
  if (sc.obstacle.enabled) {
    const OrientedBox box = sc.obstacle.box_at(t);
    for (const Vec3& c : {Vec3(1, 1, -1), Vec3(1, -1, -1), Vec3(-1, -1, -1), Vec3(-1, 1, -1)}) {
      const Vec3 p = einv.apply(box.pose.apply(c.cwiseProduct(box.half)));
      Vec2 a;
      if (in_view(cam_v, p, a)) f.object_points.push_back(a);
    }
  }
  return f;
}

/// Runs the scenario; on leaving the bounds throws ScenarioAbortError
/// carrying every frame emitted before the abort.
[[nodiscard]] inline DatasetRecord run_scenario(const Scenario& sc) {
  sc.validate();
  DatasetRecord rec;
  rec.scenario = sc;
  TruthRollout truth(sc);
  DriftProcess drift(sc.drift, sc.seed);
  const double lat = sc.drift.latency_s;

  int n_lidar = detail::lidar_frame_count(sc);
  int n_cam = detail::camera_frame_count(sc);
  long n_imu = static_cast<long>(std::floor(sc.duration_s * sc.imu_rate_hz + 1e-9));
  if (sc.duration_s <= 0.0) n_imu = -1;

  // The first tick outside the bounds truncates every stream before it.
  std::optional<std::string> abort_msg;
  for (long k = 0; k <= n_imu; ++k) {
    try {
      detail::check_bounds(sc, truth.tick(k), k * truth.dt());
    } catch (const Error& e) {
      abort_msg = e.message();
      const double t_stop = k * truth.dt();
      n_imu = k - 1;
      n_lidar = std::min(n_lidar, static_cast<int>(std::ceil(t_stop * sc.lidar_rate_hz - 1e-9)));
      n_cam = std::min(n_cam, static_cast<int>(std::ceil(t_stop * sc.camera_rate_hz - 1e-9)));
      break;
    }
  }

  // IMU samples sit half a tick into each Euler step, where mid-point
  // integration of piecewise-constant rates is exact; one leading sample
  // covers t = 0. Acceleration is the central difference of the neighbouring
  // step velocities, so consecutive samples average to each corner's change.
  auto step_velocity = [&](long k) {
    const AckermannState& s = truth.tick(std::max(0L, k));
    double th = s.pose.theta;
    if (k < 0) th += k * truth.dt() * bicycle_sample(sc, s, sc.action_at(0.0)).omega_body.z();
    return Vec3(s.speed * std::cos(th), s.speed * std::sin(th), 0.0);
  };
  auto traj = [&](double t) {
    const long j = std::lround(t * sc.imu_rate_hz - 0.5);
    const long c = std::max(0L, j);
    TrajectorySample m = bicycle_sample(sc, truth.tick(c), sc.action_at(c * truth.dt()), (j + 0.5 - c) * truth.dt());
    m.accel = (step_velocity(j + 1) - step_velocity(j - 1)) / (2.0 * truth.dt());
    return m;
  };
  if (n_imu >= 0)
    rec.imu = generate_imu(traj, -0.5 * truth.dt(), (n_imu + 0.5) * truth.dt(), sc.imu_rate_hz, sc.imu,
                           derive_seed(sc.seed, 1));

  for (int i = 0; i < n_lidar; ++i) {
    LidarFrame f;
    f.index = i;
    f.t = i / sc.lidar_rate_hz;
    const AckermannState real = truth.at(f.t);
    const AckermannState twin = truth.at(f.t - lat);
    f.ext_true = drift.apply(sc.calibration, f.t);
    f.real_pose = sc.body_pose(real.pose);
    f.virtual_pose = f.ext_true * sc.body_pose(twin.pose);
    f.real = generate_scan(sc.world, f.real_pose, sc.lidar, sc.lidar_noise_m, derive_seed(sc.seed, 1000 + 2 * i));
    f.real.timestamp = f.t;
    f.real.frame_tag = FrameTag::Real;
    // Virtual scan: virtual geometry seen from the twin, both mapped back to real coordinates.
    const WorldModel vw = detail::virtual_world_in_real(sc, f.ext_true, f.t);
    f.virt = generate_scan(vw, sc.body_pose(twin.pose), sc.lidar, sc.lidar_noise_m, derive_seed(sc.seed, 1001 + 2 * i));
    f.virt.timestamp = f.t;
    f.virt.frame_tag = FrameTag::Virtual;
    rec.lidar.push_back(std::move(f));
  }

  for (int i = 0; i < n_cam; ++i) {
    const double t = i / sc.camera_rate_hz;
    rec.camera.push_back(make_camera_frame(sc, i, t, truth.at(t), truth.at(t - lat), drift.apply(sc.calibration, t)));
  }

  if (abort_msg) {
    rec.complete = false;
    throw ScenarioAbortError(*abort_msg, std::move(rec));
  }
  return rec;
}

}  // namespace svr
