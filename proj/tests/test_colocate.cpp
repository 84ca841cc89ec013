#include <gtest/gtest.h>

#include <random>

#include "instances.hpp"
#include "oracles.hpp"
#include "svr/colocate.hpp"

using namespace svr;

TEST(TwinMap, IdentityAndHandComputed) {
  NavState s;
  s.p = Vec3(1, 0, 0);
  s.v = Vec3(0.5, 0, 0);
  s.ba = Vec3(0.1, 0.2, 0.3);
  const NavState same = apply_twin_map(s, RigidTransform());
  EXPECT_EQ(same.p, s.p);
  EXPECT_EQ(same.v, s.v);
  const NavState v = apply_twin_map(s, RigidTransform::planar(kPi / 2, 1, 2));
  EXPECT_LT((v.p - Vec3(1, 3, 0)).norm(), 1e-12);
  EXPECT_LT((v.v - Vec3(0, 0.5, 0)).norm(), 1e-12);
  EXPECT_EQ(v.ba, s.ba);
  EXPECT_NEAR(yaw_of(v.q.matrix()), kPi / 2, 1e-12);
}

TEST(TwinMap, InverseRoundTrip) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 50; ++i) {
    NavState s;
    s.p = oracle::random_vec(rng);
    s.v = oracle::random_vec(rng);
    s.q = Quaternion::from_rotation(oracle::random_rotation(rng));
    const RigidTransform e(oracle::random_rotation(rng), oracle::random_vec(rng));
    const NavState back = apply_twin_map(apply_twin_map(s, e), e.inverse());
    EXPECT_LT((back.p - s.p).norm(), 1e-12);
    EXPECT_LT((back.v - s.v).norm(), 1e-12);
    EXPECT_LT((back.q.matrix() - s.q.matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ResidualReal, ZeroOnSurfacesAndPlaneDistance) {
  CorrespondenceSet cs;
  cs.plane_assocs.push_back({0, Vec3(2, 0.3, 0.1), Vec3(1, 0, 0), 2.0});
  cs.plane_assocs.push_back({1, Vec3(2.07, -1, 0.4), Vec3(1, 0, 0), 2.0});
  cs.edge_assocs.push_back({2, Vec3(1, 1, 0.5), Vec3(1, 1, 0), Vec3(1, 1, 1)});
  const auto ev = residual_real(cs, NavState(), ErrorState::zero());
  ASSERT_EQ(ev.rows(), 4);
  EXPECT_EQ(ev.residuals(0), 0.0);
  EXPECT_NEAR(ev.residuals(1), 0.07, 1e-12);
  EXPECT_NEAR(ev.residuals.tail<2>().norm(), 0.0, 1e-15);
  EXPECT_EQ(ev.jacobian.rows(), 4);
  EXPECT_EQ(ev.meas_jacobian.rows(), 4);

  CorrespondenceSet off;
  off.edge_assocs.push_back({0, Vec3(1.3, 1.4, 0.5), Vec3(1, 1, 0), Vec3(1, 1, 1)});
  const auto e2 = residual_real(off, NavState(), ErrorState::zero());
  EXPECT_NEAR(e2.residuals.norm(), 0.5, 1e-12);
  EXPECT_NEAR(e2.weights(0), 1.0 / 1e-4, 1e-6);
}


TEST(ResidualReal, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 100; ++trial) {
    const CorrespondenceSet cs = instances::random_assocs(rng, 6, 4, 5);
    NavState prior;
    prior.p = oracle::random_vec(rng);
    prior.q = Quaternion::from_rotation(oracle::random_rotation(rng));
    const ErrorState d = ErrorState::from_vector(0.3 * Vec18::Random());
    const RigidTransform ext(oracle::random_rotation(rng), oracle::random_vec(rng));

    const auto ev = residual_real(cs, prior, d);
    auto fr = [&](const Eigen::VectorXd& v) {
      return Eigen::VectorXd(residual_real(cs, prior, ErrorState::from_vector(v)).residuals);
    };
    EXPECT_LT(oracle::max_rel_error(ev.jacobian, oracle::numeric_jacobian(fr, d.vector())), 1e-4);

    auto fd = [&](const Eigen::VectorXd& v) { return drift_vr(cs, prior, ErrorState::from_vector(v), ext); };
    EXPECT_LT(oracle::max_rel_error(drift_jacobian(cs, prior, d, ext), oracle::numeric_jacobian(fd, d.vector())),
              1e-4);
  }
}

TEST(DriftVr, AlignmentOffsetsAndRms) {
  std::mt19937_64 rng(41);
  const RigidTransform ext(oracle::random_rotation(rng), oracle::random_vec(rng));
  CorrespondenceSet cs;
  for (int i = 0; i < 20; ++i) {
    const Vec3 z = oracle::random_vec(rng, 3.0);
    cs.vr_assocs.push_back({std::size_t(i), std::size_t(i), z, ext.apply(z)});
  }
  EXPECT_LT(drift_vr(cs, NavState(), ErrorState::zero(), ext).cwiseAbs().maxCoeff(), 1e-12);

  CorrespondenceSet shifted = cs;
  for (auto& a : shifted.vr_assocs) a.virtual_point += Vec3(0.03, 0, 0);
  const auto d = drift_vr(shifted, NavState(), ErrorState::zero(), ext);
  for (std::size_t j = 0; j < shifted.vr_assocs.size(); ++j) EXPECT_NEAR(d.segment<3>(3 * j).norm(), 0.03, 1e-12);

  const RigidTransform pert(oracle::rodrigues(Vec3(0.01, -0.02, 0.03)), Vec3(0.02, 0.01, -0.01));
  const auto dp = drift_vr(cs, NavState(), ErrorState::zero(), pert * ext);
  double ss = 0.0;
  for (const auto& a : cs.vr_assocs) ss += ((pert * ext).apply(a.real_point) - a.virtual_point).squaredNorm();
  EXPECT_NEAR(std::sqrt(dp.squaredNorm() / cs.vr_assocs.size()), std::sqrt(ss / cs.vr_assocs.size()), 1e-9);

  try {
    (void)drift_vr(CorrespondenceSet{}, NavState(), ErrorState::zero(), ext);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoOverlap);
  }
}

TEST(MutualNearest, MatchesBruteForce) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> a, b;
    for (int i = 0; i < 150; ++i) a.push_back(oracle::random_vec(rng, 2.0));
    for (int i = 0; i < 170; ++i) b.push_back(oracle::random_vec(rng, 2.0));
    const double gate = 0.3;
    auto nearest = [](const std::vector<Vec3>& set, const Vec3& q) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < set.size(); ++i)
        if ((set[i] - q).squaredNorm() < (set[best] - q).squaredNorm()) best = i;
      return best;
    };
    std::vector<std::pair<std::size_t, std::size_t>> ref;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::size_t j = nearest(b, a[i]);
      if ((a[i] - b[j]).norm() <= gate && nearest(a, b[j]) == i) ref.emplace_back(i, j);
    }
    EXPECT_EQ(mutual_nearest(a, b, gate), ref);
    const auto self = mutual_nearest(a, a, gate);
    ASSERT_EQ(self.size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(self[i], std::make_pair(i, i));
  }
}

TEST(KdTree, KnnMatchesBruteForce) {
  std::mt19937_64 rng(47);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) pts.push_back(oracle::random_vec(rng, 5.0));
  const KdTree tree(pts);
  for (int q = 0; q < 100; ++q) {
    const Vec3 x = oracle::random_vec(rng, 6.0);
    std::vector<Neighbor> all;
    for (std::size_t i = 0; i < pts.size(); ++i) all.push_back({i, (pts[i] - x).squaredNorm()});
    std::sort(all.begin(), all.end());
    const auto got = tree.knn(x, 5);
    ASSERT_EQ(got.size(), 5u);
    for (int k = 0; k < 5; ++k) EXPECT_EQ(got[k].index, all[k].index);
  }
}

TEST(SolveDeltaX, PriorOnlyAndPenaltyDominance) {
  SolverConfig cfg;
  cfg.rho = 1e-300;
  const auto cov = Covariance::initial();
  EXPECT_EQ(solve_delta_x(NavState(), cov, CorrespondenceSet{}, ErrorState::zero(), cfg).vector(), Vec18::Zero());
  cfg.rho = 1e9;
  const ErrorState y = ErrorState::from_vector(0.1 * Vec18::Random());
  const auto x = solve_delta_x(NavState(), cov, CorrespondenceSet{}, y, cfg);
  EXPECT_LT((x.vector() - y.vector()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SolveDeltaX, ScalarWeightedLeastSquares) {
  NavState prior;
  prior.p = Vec3(0.3, 0, 0);
  Covariance cov = Covariance::initial();
  CorrespondenceSet cs;
  cs.plane_assocs.push_back({0, Vec3::Zero(), Vec3(1, 0, 0), 0.5});
  SolverConfig cfg;
  cfg.rho = 0.7;
  cfg.lidar_sigma = 0.02;
  ErrorState y;
  y.dp = Vec3(0.1, 0, 0);
  const auto x = solve_delta_x(prior, cov, cs, y, cfg);
  const double li = 1.0 / (cov.matrix(0, 0) + 1e-12);
  const double w = 1.0 / (cfg.lidar_sigma * cfg.lidar_sigma);
  const double ref = (w * (0.5 - 0.3) + cfg.rho * li * 0.1) / (li * (1.0 + cfg.rho) + w);
  EXPECT_NEAR(x.dp.x(), ref, 1e-10);
  EXPECT_NEAR(x.dp.y(), 0.0, 1e-12);
}

TEST(SolveDeltaX, SingularNormalEquations) {
  // Unbounded prior on position with no measurement constraining it.
  Covariance cov = Covariance::initial();
  cov.matrix.block<3, 3>(block::kP, block::kP) *= 1e300;
  SolverConfig cfg;
  try {
    (void)solve_delta_x(NavState(), cov, CorrespondenceSet{}, ErrorState::zero(), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateGeometry);
  }
}

TEST(Kabsch, RecoversKnownTransform) {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    const RigidTransform t(oracle::random_rotation(rng), oracle::random_vec(rng, 3.0));
    std::vector<Vec3> src, dst;
    for (int i = 0; i < 30; ++i) {
      src.push_back(oracle::random_vec(rng, 4.0));
      dst.push_back(t.apply(src.back()));
    }
    const RigidTransform e = kabsch(src, dst, false);
    EXPECT_LT(e.angle_to(t), 1e-9);
    EXPECT_LT(e.distance_to(t), 1e-9);
  }
  std::vector<Vec3> line{Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2), Vec3(3, 3, 3)};
  try {
    (void)kabsch(line, line, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnobservableRotation);
  }
}

TEST(SolveExtrinsics, AlignedFixedPointAndPenaltyDominance) {
  std::mt19937_64 rng(59);
  const RigidTransform ext(oracle::random_rotation(rng), oracle::random_vec(rng));
  CorrespondenceSet cs;
  for (int i = 0; i < 20; ++i) {
    const Vec3 z = oracle::random_vec(rng, 3.0);
    cs.vr_assocs.push_back({std::size_t(i), std::size_t(i), z, ext.apply(z)});
  }
  SolverConfig cfg;
  const auto cov = Covariance::initial();
  const auto sol = solve_extrinsics_y(NavState(), cov, ErrorState::zero(), cs, ext, cfg);
  EXPECT_LT(sol.ext.angle_to(ext), 1e-9);
  EXPECT_LT(sol.ext.distance_to(ext), 1e-9);
  EXPECT_LT(sol.delta_y.vector().norm(), 1e-9);

  for (auto& a : cs.vr_assocs) a.virtual_point += oracle::random_vec(rng, 0.05);
  cfg.rho = 1e9;
  const ErrorState x = ErrorState::from_vector(0.05 * Vec18::Random());
  const auto s2 = solve_extrinsics_y(NavState(), cov, x, cs, ext, cfg);
  EXPECT_LT((s2.delta_y.vector() - x.vector()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PamSolve, ConsistentDataConvergesImmediately) {
  const auto t = instances::make_tiny(1, 0.0);
  const auto r = pam_solve_assoc(t.truth, t.cov, t.assocs, t.ext_true, t.cfg);
  EXPECT_LE(r.alternations, 2);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(r.objective_trace.back(), 1e-12);
  EXPECT_LT(r.extrinsics_star.angle_to(t.ext_true), 1e-6);
  EXPECT_LT(r.extrinsics_star.distance_to(t.ext_true), 1e-6);
}

TEST(PamSolve, MatchesGridSearchOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto t = instances::make_tiny(100 + seed);
    t.cfg.max_alternations = 200;
    t.cfg.convergence_tol = 1e-15;
    t.cfg.inner_gauss_newton_iters = 5;
    const auto r = pam_solve_assoc(t.prior, t.cov, t.assocs, t.ext_init, t.cfg);
    const auto o = instances::solve_tiny_by_grid(t);
    EXPECT_NEAR(r.delta_x_star.dp.x(), o.dx(0), 1e-6);
    EXPECT_NEAR(r.delta_x_star.dp.y(), o.dx(1), 1e-6);
    EXPECT_NEAR(r.delta_x_star.dtheta.z(), o.dx(2), 1e-6);
    EXPECT_NEAR(yaw_of(r.extrinsics_star.rotation()), o.ext(0), 1e-6);
    EXPECT_NEAR(r.extrinsics_star.translation().x(), o.ext(1), 1e-6);
    EXPECT_NEAR(r.extrinsics_star.translation().y(), o.ext(2), 1e-6);
    EXPECT_FALSE(r.diverged);
  }
}

TEST(PamSolve, ObjectiveTraceNonIncreasingAndCovariancePsd) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto t = instances::make_tiny(1000 + seed, 0.01);
    t.cfg.planar = seed % 2 == 0;
    const auto r = pam_solve_assoc(t.prior, t.cov, t.assocs, t.ext_init, t.cfg);
    for (std::size_t k = 1; k < r.objective_trace.size(); ++k)
      EXPECT_LE(r.objective_trace[k], r.objective_trace[k - 1] + 1e-9);
    const Mat18& p = r.posterior_cov.matrix;
    EXPECT_LE((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat18> es(p);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
  }
}

TEST(PamSolve, LargePenaltySplitConsistency) {
  auto t = instances::make_tiny(7, 0.01);
  t.cfg.rho = 1e9;
  t.cfg.max_alternations = 20;
  const auto r = pam_solve_assoc(t.prior, t.cov, t.assocs, t.ext_init, t.cfg);
  EXPECT_LT((r.delta_x_star.vector() - r.delta_y_star.vector()).norm(), 1e-5);
}

TEST(FinalizePosterior, PlanarComposition) {
  SolveResult r;
  const RigidTransform accum = RigidTransform::planar(0.4, 1, 2);
  auto w = finalize_posterior(r, accum);
  EXPECT_LT(w.real.distance_to(accum), 1e-15);
  r.posterior_state.p = Vec3(0.1, 0, 0);
  w = finalize_posterior(r, accum);
  EXPECT_NEAR(w.real_2d().x, 1 + 0.1 * std::cos(0.4), 1e-12);
  EXPECT_NEAR(w.virtual_2d().x, 0.1, 1e-12);

  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  Pose2D chain(0.5, -0.5, 0.1);
  RigidTransform acc3 = chain.lift();
  double x = 0.5, y = -0.5, th = 0.1;
  for (int k = 0; k < 50; ++k) {
    NavState s;
    const double dx = u(rng), dy = u(rng), dth = u(rng);
    s.p = Vec3(dx, dy, 0);
    s.q = quat_exp(Vec3(0, 0, dth));
    chain = finalize_posterior(chain, s);
    r.posterior_state = s;
    acc3 = finalize_posterior(r, acc3).real;
    x += std::cos(th) * dx - std::sin(th) * dy;
    y += std::sin(th) * dx + std::cos(th) * dy;
    th += dth;
  }
  EXPECT_NEAR(chain.x, x, 1e-9);
  EXPECT_NEAR(chain.y, y, 1e-9);
  EXPECT_NEAR(chain.theta, wrap_angle(th), 1e-9);
  EXPECT_NEAR(Pose2D::from_transform(acc3).x, x, 1e-9);
}
