#pragma once

// Navigation state of one lidar interval, its 18-dim error state, the
// injection operator and mid-point IMU propagation of state and covariance.

#include <Eigen/Core>
#include <span>
#include <vector>

#include "svr/geom.hpp"

namespace svr {

inline constexpr int kErrorDim = 18;
using Vec18 = Eigen::Matrix<double, kErrorDim, 1>;
using Mat18 = Eigen::Matrix<double, kErrorDim, kErrorDim>;

/// Block offsets inside the 18-vector [dp dv dtheta dba dbg dg].
namespace block {
inline constexpr int kP = 0;
inline constexpr int kV = 3;
inline constexpr int kTheta = 6;
inline constexpr int kBa = 9;
inline constexpr int kBg = 12;
inline constexpr int kG = 15;
}  // namespace block

inline constexpr double kStandardGravity = 9.81;

/// Vehicle transformation from lidar step t to t+1, expressed in the body
/// frame at t, plus biases and local gravity.
struct NavState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Quaternion q;
  Vec3 ba = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
  Vec3 g = Vec3(0.0, 0.0, -kStandardGravity);

  [[nodiscard]] RigidTransform transform() const { return {q, p}; }

  /// Gravity sanity band applied after initialization.
  [[nodiscard]] bool gravity_plausible() const { return g.norm() >= 9.0 && g.norm() <= 10.5; }
};

struct ErrorState {
  Vec3 dp = Vec3::Zero();
  Vec3 dv = Vec3::Zero();
  Vec3 dtheta = Vec3::Zero();
  Vec3 dba = Vec3::Zero();
  Vec3 dbg = Vec3::Zero();
  Vec3 dg = Vec3::Zero();

  static ErrorState zero() { return {}; }

  static ErrorState from_vector(const Vec18& x) {
    if (!x.allFinite()) throw Error(ErrorCode::InvalidArgument, "error state: non-finite entries");
    ErrorState e;
    e.dp = x.segment<3>(block::kP);
    e.dv = x.segment<3>(block::kV);
    e.dtheta = x.segment<3>(block::kTheta);
    e.dba = x.segment<3>(block::kBa);
    e.dbg = x.segment<3>(block::kBg);
    e.dg = x.segment<3>(block::kG);
    return e;
  }

  [[nodiscard]] Vec18 vector() const {
    Vec18 x;
    x << dp, dv, dtheta, dba, dbg, dg;
    return x;
  }
};

/// Symmetric PSD covariance of the error state.
struct Covariance {
  Mat18 matrix = Mat18::Identity();

  void symmetrize() { matrix = 0.5 * (matrix + matrix.transpose()).eval(); }

  /// Default initial covariance: 1e-2 on p/v, 1e-3 on angles, 1e-4 on biases and gravity.
  static Covariance initial(double pv = 1e-2, double angle = 1e-3, double bias = 1e-4, double gravity = 1e-4) {
    Covariance c;
    c.matrix.setZero();
    Vec18 d;
    d << Vec3::Constant(pv), Vec3::Constant(pv), Vec3::Constant(angle), Vec3::Constant(bias),
        Vec3::Constant(bias), Vec3::Constant(gravity);
    c.matrix.diagonal() = d;
    return c;
  }
};

struct ImuSample {
  double timestamp = 0.0;
  Vec3 accel = Vec3::Zero();  // specific force, body frame, m/s^2
  Vec3 gyro = Vec3::Zero();   // rad/s
};

/// Continuous-time noise densities used to build the discrete process noise.
struct ImuNoiseParams {
  double accel_noise = 2e-2;       // m/s^2/sqrt(Hz)
  double gyro_noise = 2e-3;        // rad/s/sqrt(Hz)
  double accel_bias_walk = 1e-4;   // m/s^3/sqrt(Hz)
  double gyro_bias_walk = 1e-5;    // rad/s^2/sqrt(Hz)
};

/// prior [+] delta: additive on p, v, biases and gravity; q <- q * exp(dtheta).
[[nodiscard]] inline NavState boxplus_inject(const NavState& prior, const ErrorState& delta) {
  NavState out = prior;
  out.p = prior.p + delta.dp;
  out.v = prior.v + delta.dv;
  out.q = quat_compose(prior.q, quat_exp(delta.dtheta));
  out.ba = prior.ba + delta.dba;
  out.bg = prior.bg + delta.dbg;
  out.g = prior.g + delta.dg;
  return out;
}

namespace detail {

inline void check_stream(std::span<const ImuSample> imu) {
  if (imu.empty()) throw Error(ErrorCode::InsufficientData, "forward_propagate: empty IMU stream");
  for (std::size_t i = 1; i < imu.size(); ++i) {
    if (!(imu[i].timestamp > imu[i - 1].timestamp))
      throw Error(ErrorCode::InvalidStream, "forward_propagate: timestamps not strictly increasing");
  }
}

inline ImuSample interpolate(const ImuSample& a, const ImuSample& b, double t) {
  const double s = (t - a.timestamp) / (b.timestamp - a.timestamp);
  return {t, (1.0 - s) * a.accel + s * b.accel, (1.0 - s) * a.gyro + s * b.gyro};
}

}  // namespace detail

enum class SliceEndpoints { Linear, Nearest };

/// Samples covering [t0, t1]; end points are linearly interpolated, or with
/// `Nearest` copied from the closest sample (ties go to the sample inside the
/// interval). The stream must bracket both times.
[[nodiscard]] inline std::vector<ImuSample> slice_imu(std::span<const ImuSample> stream, double t0, double t1,
                                                      SliceEndpoints mode = SliceEndpoints::Linear) {
  detail::check_stream(stream);
  if (t0 < stream.front().timestamp - 1e-12 || t1 > stream.back().timestamp + 1e-12 || !(t1 >= t0))
    throw Error(ErrorCode::InsufficientData, "slice_imu: stream does not cover the requested interval");
  auto sample_at = [&](double t, bool start) {
    for (std::size_t i = 1; i < stream.size(); ++i) {
      if (stream[i].timestamp >= t) {
        if (mode == SliceEndpoints::Linear) return detail::interpolate(stream[i - 1], stream[i], t);
        const double da = t - stream[i - 1].timestamp, db = stream[i].timestamp - t;
        if (std::abs(da - db) <= 1e-9 * (da + db)) return start ? stream[i] : stream[i - 1];
        return da < db ? stream[i - 1] : stream[i];
      }
    }
    return stream.back();
  };
  std::vector<ImuSample> out;
  out.push_back(std::abs(stream.front().timestamp - t0) < 1e-12 ? stream.front() : sample_at(t0, true));
  out.front().timestamp = t0;
  for (const auto& s : stream) {
    if (s.timestamp > t0 + 1e-12 && s.timestamp < t1 - 1e-12) out.push_back(s);
  }
  if (t1 > t0) {
    ImuSample last = sample_at(t1, false);
    last.timestamp = t1;
    out.push_back(last);
  }
  return out;
}

struct PropagationResult {
  NavState state;
  Covariance cov;
};

/// Mid-point integration of the error-state kinematics over `dt_total`
/// seconds starting at imu.front().timestamp. The last sample is held if the
/// stream ends before dt_total.
[[nodiscard]] inline PropagationResult forward_propagate(const NavState& state, const Covariance& cov,
                                                         std::span<const ImuSample> imu, double dt_total,
                                                         const ImuNoiseParams& noise) {
  detail::check_stream(imu);
  if (!(dt_total >= 0.0)) throw Error(ErrorCode::InvalidArgument, "forward_propagate: negative duration");

  NavState x = state;
  Mat18 p = cov.matrix;
  const double t_start = imu.front().timestamp;
  const double t_end = t_start + dt_total;

  for (std::size_t k = 0; k < imu.size(); ++k) {
    const ImuSample& a = imu[k];
    if (a.timestamp >= t_end - 1e-12) break;
    ImuSample b = (k + 1 < imu.size()) ? imu[k + 1] : ImuSample{t_end, a.accel, a.gyro};
    if (b.timestamp > t_end) b = detail::interpolate(a, b, t_end);
    const double dt = b.timestamp - a.timestamp;

    const Vec3 omega = 0.5 * (a.gyro + b.gyro) - x.bg;
    const Mat3 r0 = x.q.matrix();
    const Quaternion q1 = quat_compose(x.q, quat_exp(omega * dt));
    const Mat3 r1 = q1.matrix();
    const Vec3 acc0 = a.accel - x.ba;
    const Vec3 acc1 = b.accel - x.ba;
    const Vec3 acc_local = 0.5 * (r0 * acc0 + r1 * acc1) + x.g;

    // Discrete error-state transition, blocks [p v theta ba bg g].
    Mat18 f = Mat18::Identity();
    const Mat3 r_mid = 0.5 * (r0 + r1);
    const Vec3 acc_mid = 0.5 * (acc0 + acc1);
    f.block<3, 3>(block::kP, block::kV) = Mat3::Identity() * dt;
    f.block<3, 3>(block::kV, block::kTheta) = -r_mid * skew(acc_mid) * dt;
    f.block<3, 3>(block::kV, block::kBa) = -r_mid * dt;
    f.block<3, 3>(block::kV, block::kG) = Mat3::Identity() * dt;
    f.block<3, 3>(block::kTheta, block::kTheta) = rotation_exp(-omega * dt);
    f.block<3, 3>(block::kTheta, block::kBg) = -right_jacobian(omega * dt) * dt;

    Mat18 q = Mat18::Zero();
    q.block<3, 3>(block::kV, block::kV).diagonal().setConstant(std::pow(noise.accel_noise * dt, 2));
    q.block<3, 3>(block::kTheta, block::kTheta).diagonal().setConstant(std::pow(noise.gyro_noise, 2) * dt);
    q.block<3, 3>(block::kBa, block::kBa).diagonal().setConstant(std::pow(noise.accel_bias_walk, 2) * dt);
    q.block<3, 3>(block::kBg, block::kBg).diagonal().setConstant(std::pow(noise.gyro_bias_walk, 2) * dt);

    x.p = x.p + x.v * dt + 0.5 * acc_local * dt * dt;
    x.v = x.v + acc_local * dt;
    x.q = q1;

    p = f * p * f.transpose() + q;
    p = 0.5 * (p + p.transpose()).eval();
  }

  Covariance out_cov;
  out_cov.matrix = p;
  return {x, out_cov};
}

/// Re-anchors a posterior at the new lidar frame: p and q become the identity
/// transformation, velocity and gravity are re-expressed in the new body frame,
/// and position/attitude uncertainty restarts at `anchor_var`.
[[nodiscard]] inline PropagationResult reset_to_frame(const NavState& posterior, const Covariance& cov,
                                                      double anchor_var = 1e-9) {
  const Mat3 rt = posterior.q.matrix().transpose();
  NavState x = posterior;
  x.p.setZero();
  x.q = Quaternion();
  x.v = rt * posterior.v;
  x.g = rt * posterior.g;

  Mat18 g = Mat18::Identity();
  g.block<3, 3>(block::kV, block::kV) = rt;
  g.block<3, 3>(block::kG, block::kG) = rt;
  Mat18 p = g * cov.matrix * g.transpose();
  for (int b : {block::kP, block::kTheta}) {
    p.middleRows<3>(b).setZero();
    p.middleCols<3>(b).setZero();
    p.block<3, 3>(b, b).diagonal().setConstant(anchor_var);
  }
  Covariance c;
  c.matrix = 0.5 * (p + p.transpose());
  return {x, c};
}

}  // namespace svr
