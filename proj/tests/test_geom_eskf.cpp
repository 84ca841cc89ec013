#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "svr/eskf.hpp"

using namespace svr;

namespace {

Quaternion random_quat(std::mt19937_64& rng) { return Quaternion::from_rotation(oracle::random_rotation(rng)); }

}  // namespace

TEST(Quaternion, ExpIdentityAndHalfTurn) {
  const auto q0 = quat_exp(Vec3::Zero());
  EXPECT_EQ(q0.w(), 1.0);
  EXPECT_EQ(q0.x(), 0.0);
  const auto q = quat_exp(Vec3(kPi, 0, 0));
  EXPECT_NEAR(q.w(), 0.0, 1e-15);
  EXPECT_NEAR(q.x(), 1.0, 1e-15);
  EXPECT_NEAR(q.y(), 0.0, 1e-15);
  EXPECT_NEAR(q.z(), 0.0, 1e-15);
}

TEST(Quaternion, ExpMatchesRodrigues) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    const Vec3 v = oracle::random_vec(rng).normalized() * 0.3;
    EXPECT_LT((quat_exp(v).matrix() - oracle::rodrigues(v)).cwiseAbs().maxCoeff(), 1e-12);
  }
  const Vec3 tiny(3e-9, -1e-9, 2e-9);
  EXPECT_LT((quat_exp(tiny).matrix() - oracle::rodrigues(tiny)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Quaternion, ExpRejectsNonFinite) {
  try {
    (void)quat_exp(Vec3(std::nan(""), 0, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
  }
}

TEST(Quaternion, ComposeCases) {
  std::mt19937_64 rng(11);
  const auto a = random_quat(rng);
  const auto id = quat_compose(a, Quaternion());
  EXPECT_NEAR(id.w(), a.w(), 1e-15);
  EXPECT_NEAR(id.z(), a.z(), 1e-15);
  const auto quarter = quat_exp(Vec3(kPi / 2, 0, 0));
  const auto half = quat_compose(quarter, quarter);
  EXPECT_NEAR(half.w(), 0.0, 1e-15);
  EXPECT_NEAR(half.x(), 1.0, 1e-15);
  for (int i = 0; i < 50; ++i) {
    const auto p = random_quat(rng), q = random_quat(rng), r = random_quat(rng);
    EXPECT_LT((quat_compose(p, q).matrix() - p.matrix() * q.matrix()).cwiseAbs().maxCoeff(), 1e-12);
    const auto lhs = quat_compose(quat_compose(p, q), r).matrix();
    const auto rhs = quat_compose(p, quat_compose(q, r)).matrix();
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Quaternion, RotationMatrixOrthonormalAndLogInverse) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto q = random_quat(rng);
    EXPECT_NEAR(q.eigen().norm(), 1.0, 1e-9);
    EXPECT_GE(q.w(), 0.0);
    const Mat3 r = q.matrix();
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
    Vec3 v = oracle::random_vec(rng);
    if (v.norm() >= kPi) v *= 3.0 / v.norm();
    EXPECT_LT((quat_log(quat_exp(v)) - v).norm(), 1e-9);
  }
}

TEST(WrapAngle, Cases) {
  EXPECT_EQ(wrap_angle(0.0), 0.0);
  EXPECT_NEAR(wrap_angle(3 * kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(-3.5 * kPi), kPi / 2, 1e-12);
  EXPECT_NEAR(wrap_angle(-kPi), kPi, 1e-12);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 1000; ++i) {
    const double t = u(rng);
    const double w = wrap_angle(t);
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
    EXPECT_NEAR(std::remainder(t - w, 2 * kPi), 0.0, 1e-9);
  }
}

TEST(RigidTransform, RejectsNonRotation) {
  Mat3 bad = Mat3::Identity();
  bad(0, 0) = -1.0;
  EXPECT_THROW(RigidTransform(bad, Vec3::Zero()), Error);
  std::mt19937_64 rng(9);
  const RigidTransform a(oracle::random_rotation(rng), oracle::random_vec(rng));
  const RigidTransform b(oracle::random_rotation(rng), oracle::random_vec(rng));
  const Vec3 p = oracle::random_vec(rng);
  EXPECT_LT(((a * b).apply(p) - a.apply(b.apply(p))).norm(), 1e-12);
  EXPECT_LT(((a * a.inverse()).apply(p) - p).norm(), 1e-12);
}

TEST(Pose2D, ComposeAndInverse) {
  const Pose2D a(1.0, 2.0, 0.5), b(-0.3, 0.7, 2.9);
  const Pose2D c = a * b;
  const RigidTransform t = a.lift() * b.lift();
  EXPECT_NEAR(c.x, t.translation().x(), 1e-12);
  EXPECT_NEAR(c.y, t.translation().y(), 1e-12);
  EXPECT_NEAR(c.theta, yaw_of(t.rotation()), 1e-12);
  const Pose2D e = a * a.inverse();
  EXPECT_NEAR(e.x, 0.0, 1e-12);
  EXPECT_NEAR(e.theta, 0.0, 1e-12);
}

TEST(Projection, Cases) {
  const CameraModel cam(100, 100, 50, 50, RigidTransform(), 100, 100);
  const Vec2 c = project_point(cam, Vec3(0, 0, 1));
  EXPECT_EQ(c.x(), 50.0);
  EXPECT_EQ(c.y(), 50.0);
  EXPECT_NEAR(project_point(cam, Vec3(0.1, 0, 1)).x(), 60.0, 1e-12);
  try {
    (void)project_point(cam, Vec3(0, 0, -1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BehindCamera);
  }
  EXPECT_THROW(CameraModel(100, 100, 100, 50, RigidTransform(), 100, 100), Error);
}

TEST(Projection, MatchesProjectionMatrixAndIsDepthScaleInvariant) {
  std::mt19937_64 rng(13);
  const RigidTransform pose(oracle::random_rotation(rng), oracle::random_vec(rng));
  const CameraModel cam(320, 300, 160, 120, pose, 320, 240);
  Eigen::Matrix<double, 3, 4> rt;
  rt << pose.rotation(), pose.translation();
  const Eigen::Matrix<double, 3, 4> p = cam.intrinsics() * rt;
  int checked = 0;
  while (checked < 100) {
    const Vec3 x = oracle::random_vec(rng, 5.0);
    if (pose.apply(x).z() <= 0.1) continue;
    const Vec3 h = p * x.homogeneous();
    const Vec2 ref = h.hnormalized();
    EXPECT_LT((project_point(cam, x) - ref).norm(), 1e-10);
    const Vec3 pc = pose.apply(x);
    EXPECT_LT((project_camera_point(cam, 3.7 * pc) - project_camera_point(cam, pc)).norm(), 1e-10);
    ++checked;
  }
}

TEST(Boxplus, ZeroAndQuarterTurn) {
  std::mt19937_64 rng(17);
  NavState s;
  s.p = oracle::random_vec(rng);
  s.q = random_quat(rng);
  const NavState t = boxplus_inject(s, ErrorState::zero());
  EXPECT_EQ(t.p, s.p);
  EXPECT_EQ(t.q.eigen().coeffs(), s.q.eigen().coeffs());
  EXPECT_EQ(ErrorState::zero().vector(), Vec18::Zero());

  ErrorState d;
  d.dtheta = Vec3(0, 0, kPi / 2);
  const NavState u = boxplus_inject(NavState(), d);
  EXPECT_NEAR(u.q.w(), std::cos(kPi / 4), 1e-15);
  EXPECT_NEAR(u.q.z(), std::sin(kPi / 4), 1e-15);
}

TEST(Boxplus, MatchesMatrixCompositionAndBoxminusInverts) {
  std::mt19937_64 rng(19);
  for (int i = 0; i < 100; ++i) {
    NavState s;
    s.p = oracle::random_vec(rng);
    s.v = oracle::random_vec(rng);
    s.q = random_quat(rng);
    s.ba = oracle::random_vec(rng, 0.1);
    Vec18 dv = Vec18::Random();
    Vec3 th = dv.segment<3>(block::kTheta);
    if (th.norm() > 3.0) dv.segment<3>(block::kTheta) = th * (3.0 / th.norm());
    const ErrorState d = ErrorState::from_vector(dv);
    const NavState t = boxplus_inject(s, d);
    EXPECT_EQ(t.p, Vec3(s.p + d.dp));
    EXPECT_LT((t.q.matrix() - s.q.matrix() * oracle::rodrigues(d.dtheta)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((oracle::boxminus(t, s).vector() - dv).cwiseAbs().maxCoeff(), 1e-9);
  }
}

namespace {

std::vector<ImuSample> smooth_stream(std::mt19937_64& rng, double rate, double duration) {
  const Vec3 a0 = oracle::random_vec(rng, 2.0), a1 = oracle::random_vec(rng, 2.0);
  const Vec3 w0 = oracle::random_vec(rng, 1.0), w1 = oracle::random_vec(rng, 1.0);
  std::vector<ImuSample> out;
  const int n = static_cast<int>(std::round(duration * rate));
  for (int k = 0; k <= n; ++k) {
    const double t = k / rate;
    out.push_back({t, a0 + Vec3(std::sin(3 * t), std::cos(2 * t), t).cwiseProduct(a1),
                   w0 + std::sin(5 * t) * w1});
  }
  return out;
}

}  // namespace

TEST(ForwardPropagate, StationaryGravityCancellation) {
  std::vector<ImuSample> imu;
  for (int k = 0; k <= 20; ++k) imu.push_back({k * 0.005, Vec3(0, 0, kStandardGravity), Vec3::Zero()});
  const auto r = forward_propagate(NavState(), Covariance::initial(), imu, 0.1, ImuNoiseParams{});
  EXPECT_LT(r.state.p.norm(), 1e-9);
  EXPECT_LT(r.state.v.norm(), 1e-9);
  EXPECT_EQ(r.state.q.w(), 1.0);
}

TEST(ForwardPropagate, ConstantAcceleration) {
  const Vec3 a(0.7, -0.2, 0.1);
  std::vector<ImuSample> imu;
  for (int k = 0; k <= 200; ++k) imu.push_back({k * 0.005, a + Vec3(0, 0, kStandardGravity), Vec3::Zero()});
  const auto r = forward_propagate(NavState(), Covariance::initial(), imu, 1.0, ImuNoiseParams{});
  EXPECT_LT((r.state.p - 0.5 * a).norm(), 1e-6);
}

TEST(ForwardPropagate, MatchesFineStepRk4) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const auto imu = smooth_stream(rng, 200.0, 0.02);
    NavState s;
    s.v = oracle::random_vec(rng);
    s.q = random_quat(rng);
    s.ba = oracle::random_vec(rng, 0.05);
    s.bg = oracle::random_vec(rng, 0.01);
    const auto r = forward_propagate(s, Covariance::initial(), imu, 0.02, ImuNoiseParams{});
    const auto ref = oracle::rk4_imu({s.p, s.v, s.q.matrix()}, imu, 0.02, s.ba, s.bg, s.g, 10);
    EXPECT_LT((r.state.p - ref.p).norm(), 1e-4);
    EXPECT_LT((r.state.v - ref.v).norm(), 1e-3);
    EXPECT_LT(oracle::log_so3(r.state.q.matrix().transpose() * ref.r).norm(), 1e-4);
  }
}

TEST(ForwardPropagate, CovarianceStaysSymmetricPsdAndDeterministic) {
  std::mt19937_64 rng(29);
  NavState s;
  Covariance c = Covariance::initial();
  for (int step = 0; step < 50; ++step) {
    const auto imu = smooth_stream(rng, 200.0, 0.1);
    const auto r = forward_propagate(s, c, imu, 0.1, ImuNoiseParams{});
    const auto r2 = forward_propagate(s, c, imu, 0.1, ImuNoiseParams{});
    EXPECT_EQ(r.cov.matrix, r2.cov.matrix);
    EXPECT_EQ(r.state.p, r2.state.p);
    s = r.state;
    c = r.cov;
    EXPECT_LE((c.matrix - c.matrix.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat18> es(c.matrix);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
    const auto reset = reset_to_frame(s, c);
    s = reset.state;
    c = reset.cov;
  }
}

TEST(ForwardPropagate, InvalidStreams) {
  try {
    (void)forward_propagate(NavState(), Covariance::initial(), std::vector<ImuSample>{}, 0.1, ImuNoiseParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientData);
  }
  std::vector<ImuSample> bad{{0.0, Vec3::Zero(), Vec3::Zero()}, {0.0, Vec3::Zero(), Vec3::Zero()}};
  try {
    (void)forward_propagate(NavState(), Covariance::initial(), bad, 0.1, ImuNoiseParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidStream);
  }
}

TEST(SliceImu, InterpolatesEndpoints) {
  std::vector<ImuSample> imu;
  for (int k = 0; k <= 10; ++k) imu.push_back({k * 0.01, Vec3(k, 0, 0), Vec3::Zero()});
  const auto s = slice_imu(imu, 0.015, 0.055);
  ASSERT_EQ(s.size(), 6u);
  EXPECT_NEAR(s.front().accel.x(), 1.5, 1e-12);
  EXPECT_NEAR(s.back().accel.x(), 5.5, 1e-12);
  EXPECT_NEAR(s.back().timestamp, 0.055, 1e-15);
}

TEST(ResetToFrame, ReexpressesVelocityAndGravity) {
  NavState s;
  s.q = quat_exp(Vec3(0, 0, 0.5));
  s.p = Vec3(1, 2, 0);
  s.v = Vec3(1, 0, 0);
  const auto r = reset_to_frame(s, Covariance::initial());
  EXPECT_EQ(r.state.p, Vec3::Zero());
  EXPECT_LT((r.state.v - rotation_about_z(-0.5) * Vec3(1, 0, 0)).norm(), 1e-12);
  EXPECT_LT((r.state.g - s.g).norm(), 1e-12);
  EXPECT_TRUE(r.state.gravity_plausible());
}
