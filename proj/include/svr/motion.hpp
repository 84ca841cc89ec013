#pragma once

// Kinematic bicycle evolution, horizon rollout, RoI center and polygon, and
// the motion-aware match filter.

#include <Eigen/Core>
#include <vector>

#include "svr/geom.hpp"

namespace svr {

struct AckermannState {
  Pose2D pose;
  double speed = 0.0;      // m/s
  double wheelbase = 0.2;  // m

  friend bool operator==(const AckermannState&, const AckermannState&) = default;
};

struct Action {
  double steer = 0.0;     // rad, front wheel
  double throttle = 0.0;  // [0, 1]
  double brake = 0.0;     // [0, 1]

  friend bool operator==(const Action&, const Action&) = default;
};

struct MotionConfig {
  int horizon = 10;
  double dt = 0.1;
  double max_steer = 0.5;
  double accel_gain = 1.0;  // m/s^2 at full throttle
  double brake_gain = 2.0;  // m/s^2 at full brake

  void validate() const {
    if (horizon < 1) throw Error(ErrorCode::Config, "motion: horizon must be >= 1");
    if (!(dt > 0.0)) throw Error(ErrorCode::Config, "motion: dt must be positive");
    if (!(max_steer > 0.0)) throw Error(ErrorCode::Config, "motion: max_steer must be positive");
  }
};

[[nodiscard]] inline Action clamp_action(const Action& a, double max_steer) {
  return {std::clamp(a.steer, -max_steer, max_steer), std::clamp(a.throttle, 0.0, 1.0),
          std::clamp(a.brake, 0.0, 1.0)};
}

/// Explicit kinematic bicycle step; position and heading advance with the
/// speed and heading at the start of the step.
[[nodiscard]] inline AckermannState ackermann_step(const AckermannState& s, const Action& action, double dt,
                                                   const MotionConfig& cfg) {
  if (!(s.wheelbase > 0.0)) throw Error(ErrorCode::InvalidArgument, "ackermann: wheelbase must be positive");
  const Action a = clamp_action(action, cfg.max_steer);
  AckermannState n = s;
  n.speed = std::max(0.0, s.speed + (cfg.accel_gain * a.throttle - cfg.brake_gain * a.brake) * dt);
  const double th = s.pose.theta;
  n.pose = Pose2D(s.pose.x + s.speed * std::cos(th) * dt, s.pose.y + s.speed * std::sin(th) * dt,
                  th + s.speed * std::tan(a.steer) / s.wheelbase * dt);
  return n;
}

[[nodiscard]] inline AckermannState ackermann_step(const AckermannState& s, const Action& a, const MotionConfig& cfg) {
  return ackermann_step(s, a, cfg.dt, cfg);
}

/// Element h is the state after h + 1 steps.
[[nodiscard]] inline std::vector<AckermannState> predict_horizon(const AckermannState& s0,
                                                                 const std::vector<Action>& actions,
                                                                 const MotionConfig& cfg) {
  if (static_cast<int>(actions.size()) != cfg.horizon)
    throw Error(ErrorCode::InvalidArgument, "predict_horizon: action count differs from horizon");
  std::vector<AckermannState> out;
  out.reserve(actions.size());
  AckermannState s = s0;
  for (const auto& a : actions) {
    s = ackermann_step(s, a, cfg);
    out.push_back(s);
  }
  return out;
}

/// Least-squares center of the projected predicted positions: their centroid.
/// Positions are lifted to `ref_height` before projection.
[[nodiscard]] inline Vec2 roi_center(const std::vector<AckermannState>& states, const CameraModel& cam,
                                     double ref_height) {
  if (states.empty()) throw Error(ErrorCode::InvalidArgument, "roi_center: no states");
  Vec2 sum = Vec2::Zero();
  for (const auto& s : states) sum += project_point(cam, Vec3(s.pose.x, s.pose.y, ref_height));
  return sum / static_cast<double>(states.size());
}

/// Convex polygon {g | G g <= d} with unit outward normals as rows of G.
struct RoIPolygon {
  Eigen::MatrixX2d G;
  Eigen::VectorXd d;
  Vec2 center = Vec2::Zero();
  int num_edges = 0;
  std::vector<Vec2> vertices;  // counter-clockwise in (u, v) pixel axes

  [[nodiscard]] bool contains(const Vec2& g) const { return ((G * g) - d).maxCoeff() <= 0.0; }

  [[nodiscard]] double area() const {
    double a = 0.0;
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      const Vec2& p = vertices[i];
      const Vec2& q = vertices[(i + 1) % vertices.size()];
      a += p.x() * q.y() - q.x() * p.y();
    }
    return 0.5 * std::abs(a);
  }
};

/// Square of side `side` centered at `o`, sheared horizontally by `shear`
/// (u += tan(shear) * v); the shear has unit determinant so the area stays side^2.
[[nodiscard]] inline RoIPolygon build_roi_polygon(const Vec2& o, double side, double shear, int l = 4) {
  if (l != 4) throw Error(ErrorCode::UnsupportedShape, "build_roi_polygon: only quadrilaterals are supported");
  if (!(side > 0.0)) throw Error(ErrorCode::InvalidArgument, "build_roi_polygon: side must be positive");
  if (!(std::abs(shear) < kPi / 2)) throw Error(ErrorCode::InvalidArgument, "build_roi_polygon: |shear| >= pi/2");
  const double t = std::tan(shear);
  const double h = 0.5 * side;
  Mat2 s;
  s << 1.0, t, 0.0, 1.0;
  RoIPolygon p;
  p.center = o;
  p.num_edges = 4;
  for (const Vec2& c : {Vec2(-h, -h), Vec2(h, -h), Vec2(h, h), Vec2(-h, h)}) p.vertices.push_back(o + s * c);
  // Half-planes of the preimage square |u - t v| <= h, |v| <= h, normalized.
  const double k = std::sqrt(1.0 + t * t);
  p.G.resize(4, 2);
  p.G << 1.0 / k, -t / k, -1.0 / k, t / k, 0.0, 1.0, 0.0, -1.0;
  p.d.resize(4);
  for (int i = 0; i < 2; ++i) p.d(i) = p.G.row(i).dot(o) + h / k;
  for (int i = 2; i < 4; ++i) p.d(i) = p.G.row(i).dot(o) + h;
  return p;
}

/// Shear driven by the heading-change rate over the predicted horizon,
/// clamped away from the degenerate +-pi/2.
[[nodiscard]] inline double shear_from_motion(const AckermannState& s0, const std::vector<AckermannState>& states,
                                              const MotionConfig& cfg, double gain = 1.0) {
  if (states.empty()) return 0.0;
  const double rate = wrap_angle(states.back().pose.theta - s0.pose.theta) / (cfg.dt * states.size());
  return std::clamp(gain * rate, -1.2, 1.2);
}

struct Match {
  Vec2 virt = Vec2::Zero();  // pixel in the virtual image
  Vec2 real = Vec2::Zero();  // pixel in the real image
  double score = 1.0;

  friend bool operator==(const Match&, const Match&) = default;
};

struct MatchSet {
  std::vector<Match> pairs;

  [[nodiscard]] std::size_t size() const { return pairs.size(); }
  friend bool operator==(const MatchSet&, const MatchSet&) = default;
};

/// Keeps the matches whose real-image point lies in the RoI; order preserved.
[[nodiscard]] inline MatchSet maaf_filter(const MatchSet& matches, const RoIPolygon& roi) {
  MatchSet out;
  for (const auto& m : matches.pairs) {
    if (roi.contains(m.real)) out.pairs.push_back(m);
  }
  return out;
}

}  // namespace svr
