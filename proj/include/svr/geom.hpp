#pragma once

// Rotation, rigid-transform, planar-pose and pinhole-camera primitives.
// Quaternions follow the Hamilton convention, stored w-first.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "svr/error.hpp"

namespace svr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

[[nodiscard]] inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<     0.0, -v.z(),  v.y(),
         v.z(),    0.0, -v.x(),
        -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

/// Wraps an angle into (-pi, pi].
[[nodiscard]] inline double wrap_angle(double theta) {
  if (!std::isfinite(theta)) throw Error(ErrorCode::InvalidArgument, "wrap_angle: non-finite angle");
  double r = std::fmod(theta + kPi, 2.0 * kPi);
  if (r <= 0.0) r += 2.0 * kPi;
  return r - kPi;
}

/// Unit quaternion, Hamilton product, canonical sign w >= 0.
class Quaternion {
 public:
  Quaternion() = default;

  /// Normalizes and canonicalizes; throws on zero or non-finite input.
  static Quaternion from_coeffs(double w, double x, double y, double z) {
    Eigen::Quaterniond q(w, x, y, z);
    if (!q.coeffs().allFinite()) throw Error(ErrorCode::InvalidArgument, "quaternion: non-finite coefficients");
    const double n = q.norm();
    if (n < 1e-300) throw Error(ErrorCode::InvalidArgument, "quaternion: zero norm");
    return Quaternion(q);
  }

  static Quaternion from_rotation(const Mat3& r) { return Quaternion(Eigen::Quaterniond(r)); }

  static Quaternion from_eigen(const Eigen::Quaterniond& q) { return Quaternion(q); }

  [[nodiscard]] double w() const { return q_.w(); }
  [[nodiscard]] double x() const { return q_.x(); }
  [[nodiscard]] double y() const { return q_.y(); }
  [[nodiscard]] double z() const { return q_.z(); }
  [[nodiscard]] const Eigen::Quaterniond& eigen() const { return q_; }

  [[nodiscard]] Mat3 matrix() const { return q_.toRotationMatrix(); }
  [[nodiscard]] Vec3 rotate(const Vec3& v) const { return q_ * v; }
  [[nodiscard]] Quaternion inverse() const { return Quaternion(q_.conjugate()); }

 private:
  explicit Quaternion(const Eigen::Quaterniond& q) : q_(q.normalized()) {
    if (q_.w() < 0.0) q_.coeffs() *= -1.0;
  }

  Eigen::Quaterniond q_{1.0, 0.0, 0.0, 0.0};
};

/// Exponential map from a rotation vector (axis * angle) to a unit quaternion.
[[nodiscard]] inline Quaternion quat_exp(const Vec3& angle_vec) {
  if (!angle_vec.allFinite()) throw Error(ErrorCode::InvalidArgument, "quat_exp: non-finite input");
  const double theta = angle_vec.norm();
  if (theta < 1e-8) {
    // Second-order Taylor expansion of cos(theta/2) and sin(theta/2)/theta.
    const double t2 = theta * theta;
    const Vec3 xyz = 0.5 * (1.0 - t2 / 24.0) * angle_vec;
    return Quaternion::from_coeffs(1.0 - t2 / 8.0, xyz.x(), xyz.y(), xyz.z());
  }
  const double half = 0.5 * theta;
  const Vec3 xyz = (std::sin(half) / theta) * angle_vec;
  return Quaternion::from_coeffs(std::cos(half), xyz.x(), xyz.y(), xyz.z());
}

/// Logarithm of a unit quaternion; the result has norm in [0, pi].
[[nodiscard]] inline Vec3 quat_log(const Quaternion& q) {
  const Vec3 v(q.x(), q.y(), q.z());
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v / std::max(q.w(), 1e-300);
  const double angle = 2.0 * std::atan2(s, q.w());
  return (angle / s) * v;
}

[[nodiscard]] inline Quaternion quat_compose(const Quaternion& a, const Quaternion& b) {
  return Quaternion::from_eigen(a.eigen() * b.eigen());
}

[[nodiscard]] inline Mat3 rotation_exp(const Vec3& v) { return quat_exp(v).matrix(); }

[[nodiscard]] inline Vec3 rotation_log(const Mat3& r) { return quat_log(Quaternion::from_rotation(r)); }

/// Right Jacobian of SO(3): exp(v + dv) ~= exp(v) exp(Jr(v) dv).
[[nodiscard]] inline Mat3 right_jacobian(const Vec3& v) {
  const double theta = v.norm();
  const Mat3 k = skew(v);
  if (theta < 1e-6) return Mat3::Identity() - 0.5 * k + (1.0 / 6.0) * k * k;
  const double t2 = theta * theta;
  return Mat3::Identity() - ((1.0 - std::cos(theta)) / t2) * k + ((theta - std::sin(theta)) / (t2 * theta)) * k * k;
}

[[nodiscard]] inline Mat3 rotation_about_z(double yaw) {
  return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
}

/// Heading of a rotation matrix: yaw of its x-axis projected on the ground plane.
[[nodiscard]] inline double yaw_of(const Mat3& r) { return wrap_angle(std::atan2(r(1, 0), r(0, 0))); }

/// Rigid transform x -> R x + t with R a proper rotation.
class RigidTransform {
 public:
  RigidTransform() = default;

  RigidTransform(const Mat3& rotation, const Vec3& translation) : rotation_(rotation), translation_(translation) {
    if (!rotation.allFinite() || !translation.allFinite())
      throw Error(ErrorCode::InvalidArgument, "rigid transform: non-finite entries");
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    const double det = rotation.determinant();
    if (ortho > 1e-9 || std::abs(det - 1.0) > 1e-9)
      throw Error(ErrorCode::InvalidArgument, "rigid transform: rotation not orthonormal with det +1");
  }

  RigidTransform(const Quaternion& q, const Vec3& translation) : RigidTransform(q.matrix(), translation) {}

  static RigidTransform identity() { return {}; }

  /// Yaw about +z followed by a translation in the ground plane.
  static RigidTransform planar(double yaw, double x, double y, double z = 0.0) {
    return {rotation_about_z(yaw), Vec3(x, y, z)};
  }

  [[nodiscard]] const Mat3& rotation() const { return rotation_; }
  [[nodiscard]] const Vec3& translation() const { return translation_; }
  [[nodiscard]] Quaternion quaternion() const { return Quaternion::from_rotation(rotation_); }

  [[nodiscard]] Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }

  [[nodiscard]] RigidTransform inverse() const {
    const Mat3 rt = rotation_.transpose();
    return RigidTransform(rt, -rt * translation_);
  }

  /// (a * b).apply(p) == a.apply(b.apply(p))
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return {orthonormalize(a.rotation_ * b.rotation_), a.rotation_ * b.translation_ + a.translation_};
  }

  /// Rotation angle and translation distance between two transforms.
  [[nodiscard]] double angle_to(const RigidTransform& other) const {
    return rotation_log(rotation_.transpose() * other.rotation_).norm();
  }
  [[nodiscard]] double distance_to(const RigidTransform& other) const {
    return (translation_ - other.translation_).norm();
  }

  friend bool operator==(const RigidTransform& a, const RigidTransform& b) {
    return a.rotation_ == b.rotation_ && a.translation_ == b.translation_;
  }

 private:
  static Mat3 orthonormalize(const Mat3& r) {
    return Eigen::Quaterniond(r).normalized().toRotationMatrix();
  }

  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

/// Ground-plane pose; theta is kept in (-pi, pi].
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2D() = default;
  Pose2D(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}

  friend bool operator==(const Pose2D&, const Pose2D&) = default;

  friend Pose2D operator*(const Pose2D& a, const Pose2D& b) {
    const double c = std::cos(a.theta), s = std::sin(a.theta);
    return {a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta};
  }

  [[nodiscard]] Pose2D inverse() const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {-(c * x + s * y), s * x - c * y, -theta};
  }

  [[nodiscard]] RigidTransform lift(double z = 0.0) const { return RigidTransform::planar(theta, x, y, z); }

  static Pose2D from_transform(const RigidTransform& t) {
    return {t.translation().x(), t.translation().y(), yaw_of(t.rotation())};
  }
};

/// Pinhole camera without distortion. `pose` maps world points into the
/// camera frame (x right, y down, z forward).
struct CameraModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  RigidTransform pose;
  int width = 1;   // W
  int height = 1;  // L

  CameraModel() = default;
  CameraModel(double fx_, double fy_, double cx_, double cy_, const RigidTransform& pose_, int width_, int height_)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_), pose(pose_), width(width_), height(height_) {
    validate();
  }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "camera: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "camera: empty image size");
    if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height)
      throw Error(ErrorCode::InvalidArgument, "camera: principal point outside the image");
  }

  [[nodiscard]] Mat3 intrinsics() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }
};

/// Projects a point given in the camera frame.
[[nodiscard]] inline Vec2 project_camera_point(const CameraModel& cam, const Vec3& p_cam) {
  if (!p_cam.allFinite()) throw Error(ErrorCode::InvalidArgument, "project: non-finite point");
  if (!(p_cam.z() > 0.0)) throw Error(ErrorCode::BehindCamera, "project: point has non-positive depth");
  return {cam.fx * p_cam.x() / p_cam.z() + cam.cx, cam.fy * p_cam.y() / p_cam.z() + cam.cy};
}

/// Pinhole projection f_proj of a world point; pixels outside the image are returned as-is.
[[nodiscard]] inline Vec2 project_point(const CameraModel& cam, const Vec3& p_world) {
  return project_camera_point(cam, cam.pose.apply(p_world));
}

}  // namespace svr
