#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "svr/colocate.hpp"
#include "svr/sim.hpp"

using namespace svr;

namespace {

/// Six inward-facing unit squares around the origin.
WorldModel unit_cube_room() {
  WorldModel w;
  w.ground = false;
  const Vec3 axes[3] = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  for (int a = 0; a < 3; ++a)
    for (double s : {1.0, -1.0}) {
      BoundedPlane p;
      p.normal = s * axes[a];
      p.offset = 0.5;
      p.center = 0.5 * p.normal;
      p.axis_u = axes[(a + 1) % 3];
      p.half_u = p.half_v = 0.5;
      w.planes.push_back(p);
    }
  return w;
}

/// Brute-force nearest hit: ground, every plane rectangle, and every box
/// face treated as its own rectangle.
double brute_force_range(const WorldModel& w, const Vec3& o, const Vec3& d, SurfaceClass& cls) {
  double best = std::numeric_limits<double>::infinity();
  cls = SurfaceClass::None;
  auto rect = [&](const Vec3& n, const Vec3& c, const Vec3& u, const Vec3& v, double hu, double hv, SurfaceClass k) {
    const double den = n.dot(d);
    if (std::abs(den) < 1e-14) return;
    const double t = n.dot(c - o) / den;
    if (t <= 1e-9) return;
    const Vec3 q = o + t * d - c;
    if (std::abs(q.dot(u)) > hu + 1e-12 || std::abs(q.dot(v)) > hv + 1e-12) return;
    if (t < best) {
      best = t;
      cls = k;
    }
  };
  if (w.ground && o.z() > 0 && d.z() < 0) {
    const double t = -o.z() / d.z();
    if (t < best) {
      best = t;
      cls = SurfaceClass::Ground;
    }
  }
  for (const auto& p : w.planes) rect(p.normal, p.center, p.axis_u, p.axis_v(), p.half_u, p.half_v, p.cls);
  for (const auto& b : w.boxes) {
    const Mat3& r = b.pose.rotation();
    for (int a = 0; a < 3; ++a)
      for (double s : {1.0, -1.0}) {
        const int ia = (a + 1) % 3, ib = (a + 2) % 3;
        rect(r.col(a), b.pose.apply(s * b.half(a) * Vec3::Unit(a)), r.col(ia), r.col(ib), b.half(ia), b.half(ib), b.cls);
      }
  }
  return best;
}

double surface_residual(const WorldModel& w, const Vec3& p) {
  double best = w.ground ? std::abs(p.z()) : 1e9;
  for (const auto& pl : w.planes) best = std::min(best, std::abs(pl.normal.dot(p) - pl.offset));
  for (const auto& b : w.boxes) {
    const Vec3 l = b.pose.inverse().apply(p);
    for (int a = 0; a < 3; ++a) best = std::min(best, std::abs(std::abs(l(a)) - b.half(a)));
  }
  return best;
}

Scenario quiet_scenario(double duration) {
  Scenario sc = reference_scenario();
  sc.duration_s = duration;
  sc.lidar_noise_m = 0.0;
  sc.imu = {};
  sc.lidar.azimuth_steps = 90;
  return sc;
}

}  // namespace

TEST(World, AxisRayFromCubeCenter) {
  const WorldModel w = unit_cube_room();
  LidarPattern pat;
  pat.rings = 1;
  pat.azimuth_steps = 16;
  const LidarScan s = generate_scan(w, RigidTransform(), pat, 0.0, 1);
  ASSERT_EQ(s.size(), 16u);
  EXPECT_NEAR(s.points[0].x(), 0.5, 1e-12);
  EXPECT_NEAR(s.points[0].norm(), 0.5, 1e-12);
  EXPECT_NEAR(s.points[4].y(), 0.5, 1e-12);
}

TEST(World, ScanPointsLieOnSurfaces) {
  const Scenario sc = reference_scenario();
  const RigidTransform pose = RigidTransform::planar(0.4, 0.3, -1.0, 0.25);
  const LidarScan s = generate_scan(sc.world, pose, sc.lidar, 0.0, 3);
  ASSERT_GT(s.size(), 1000u);
  for (const auto& p : s.points) EXPECT_LT(surface_residual(sc.world, pose.apply(p)), 1e-9);
  // Determinism and noise.
  EXPECT_EQ(generate_scan(sc.world, pose, sc.lidar, 0.01, 5), generate_scan(sc.world, pose, sc.lidar, 0.01, 5));
  EXPECT_FALSE(generate_scan(sc.world, pose, sc.lidar, 0.01, 5) == generate_scan(sc.world, pose, sc.lidar, 0.01, 6));
}

TEST(World, RayCastMatchesBruteForce) {
  Scenario sc = reference_scenario();
  sc.world.boxes.push_back(sc.obstacle.box_at(0.0));
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int hits = 0;
  for (int i = 0; i < 3000; ++i) {
    const Vec3 o(3.0 * u(rng), 3.0 * u(rng), 0.05 + 0.6 * std::abs(u(rng)));
    bool inside = false;
    for (const auto& b : sc.world.boxes) inside = inside || b.contains(o);
    if (inside) continue;
    const Vec3 d = Vec3(u(rng), u(rng), u(rng)).normalized();
    SurfaceClass cls;
    const double ref = brute_force_range(sc.world, o, d, cls);
    const auto hit = cast_ray(sc.world, o, d);
    if (!std::isfinite(ref)) {
      EXPECT_FALSE(hit.has_value());
      continue;
    }
    ASSERT_TRUE(hit.has_value());
    EXPECT_NEAR(hit->range, ref, 1e-9);
    EXPECT_EQ(hit->cls, cls);
    ++hits;
  }
  EXPECT_GT(hits, 1500);
}

TEST(World, SensorInsideGeometryIsInvalid) {
  const Scenario sc = reference_scenario();
  const Vec3 c = sc.world.boxes[0].pose.translation();
  try {
    (void)generate_scan(sc.world, RigidTransform::planar(0, c.x(), c.y(), 0.25), sc.lidar, 0.0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidPose);
  }
  LidarPattern tiny;
  tiny.rings = 1;
  tiny.azimuth_steps = 8;
  EXPECT_THROW((void)generate_scan(sc.world, RigidTransform::planar(0, 0, 0, 0.25), tiny, 0.0, 1), Error);
}

TEST(World, RenderEmptyWorldAndSingleBox) {
  CameraMount mount;
  const CameraModel cam = mount.model(RigidTransform::planar(0, 0, 0, 0.25), 0.25);
  WorldModel empty;
  empty.ground = false;
  const RenderResult e = render_frame(empty, cam);
  for (std::size_t i = 3; i < e.image.data.size(); ++i) EXPECT_EQ(e.image.data[i], e.image.data[i % 3]);
  EXPECT_EQ(e.object.count(), 0u);
  EXPECT_TRUE(e.prompts.boxes.empty());

  WorldModel w;
  w.boxes.push_back({RigidTransform::planar(0.4, 1.5, 0.1, 0.1), Vec3(0.2, 0.12, 0.1), SurfaceClass::Obstacle});
  const RenderResult r = render_frame(w, cam);
  std::size_t count = 0;
  const Vec3 o = camera_center(cam);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      SurfaceClass cls;
      (void)brute_force_range(w, o, pixel_ray(cam, x, y), cls);
      count += cls == SurfaceClass::Obstacle ? 1 : 0;
    }
  EXPECT_GT(count, 50u);
  EXPECT_EQ(r.object.count(), count);
  ASSERT_EQ(r.prompts.boxes.size(), 1u);
  EXPECT_EQ(r.prompts.boxes[0], *mask_bbox(r.object, static_cast<int>(SurfaceClass::Obstacle)));
  r.prompts.validate(cam.width, cam.height);
}

TEST(World, GroundHomographyMapsPlaneProjections) {
  CameraMount mount;
  const CameraModel a = mount.model(RigidTransform::planar(0.1, 0.0, 0.0, 0.25), 0.25);
  const CameraModel b = mount.model(RigidTransform::planar(-0.05, 0.2, 0.1, 0.25), 0.25);
  const PerspectiveTransform h = ground_homography(a, b);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(0.8 + 3.0 * u(rng), -1.0 + 2.0 * u(rng), 0.0);
    const Vec2 pa = project_point(a, p);
    const Vec2 pb = project_point(b, p);
    EXPECT_LT((h.apply(pa) - pb).norm(), 1e-9);
  }
}

TEST(Drift, ZeroAndFixedPerturbation) {
  const RigidTransform e = RigidTransform::planar(0.3, 1.0, -2.0);
  DriftModel zero;
  for (double t : {0.0, 1.3, 10.0}) {
    const RigidTransform r = inject_drift(e, zero, t, 4);
    EXPECT_EQ(r.rotation(), e.rotation());
    EXPECT_EQ(r.translation(), e.translation());
  }
  DriftModel fixed;
  fixed.perturbation = RigidTransform::planar(0.01, 0.02, 0.0);
  const RigidTransform f0 = inject_drift(e, fixed, 0.0, 4);
  for (double t : {0.5, 3.0}) {
    const RigidTransform ft = inject_drift(e, fixed, t, 4);
    EXPECT_EQ(ft.translation(), f0.translation());
    EXPECT_LT(ft.distance_to(fixed.perturbation * e), 1e-15);
  }
}

TEST(Drift, RandomWalkStepStatistics) {
  DriftModel m;
  m.walk_sigma_m = 0.003;
  m.walk_sigma_rad = 0.002;
  m.step_s = 0.1;
  double sx = 0, sy = 0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    DriftProcess p(m, seed);
    RigidTransform prev = p.walk_at(0.0);
    for (int k = 1; k <= 10; ++k) {
      const RigidTransform cur = p.walk_at(k * m.step_s);
      const RigidTransform step = cur * prev.inverse();
      sx += step.translation().x() * step.translation().x();
      sy += std::pow(yaw_of(step.rotation()), 2);
      ++n;
      prev = cur;
    }
  }
  EXPECT_NEAR(std::sqrt(sx / n), m.walk_sigma_m, 0.2 * m.walk_sigma_m);
  EXPECT_NEAR(std::sqrt(sy / n), m.walk_sigma_rad, 0.2 * m.walk_sigma_rad);
}

TEST(Imu, StationarySpinAndCircle) {
  const Vec3 g(0, 0, -kStandardGravity);
  auto still = [](double) { return TrajectorySample{RigidTransform::planar(0.7, 1, 2, 0.3), Vec3::Zero(), Vec3::Zero()}; };
  for (const auto& m : generate_imu(still, 0.0, 1.0, 100.0, {}, 1)) {
    EXPECT_LT((m.accel - (-g)).norm(), 1e-12);
    EXPECT_EQ(m.gyro, Vec3::Zero());
  }
  const double w = 0.8;
  auto spin = [&](double t) { return TrajectorySample{RigidTransform::planar(w * t, 0, 0), Vec3::Zero(), Vec3(0, 0, w)}; };
  const auto spun = generate_imu(spin, 0.0, 2.0, 50.0, {}, 1);
  EXPECT_EQ(spun.size(), 101u);
  for (const auto& m : spun) EXPECT_EQ(m.gyro.z(), w);

  // Circle of radius r at angular rate w, body x along the velocity.
  const double r = 1.7;
  auto circle = [&](double t) {
    const double th = w * t;
    const Vec3 pos(r * std::sin(th), -r * std::cos(th), 0.0);
    const Vec3 acc = -w * w * Vec3(pos.x(), pos.y(), 0.0);
    return TrajectorySample{RigidTransform(rotation_about_z(th), pos), acc, Vec3(0, 0, w)};
  };
  for (const auto& m : generate_imu(circle, 0.0, 5.0, 100.0, {}, 1)) {
    EXPECT_NEAR(m.accel.x(), 0.0, 1e-9);
    EXPECT_NEAR(m.accel.y(), w * w * r, 1e-9);
    EXPECT_NEAR(m.accel.z(), kStandardGravity, 1e-9);
  }
}

TEST(Scenario, ZeroDurationGivesEmptyRecord) {
  Scenario sc = quiet_scenario(0.0);
  const DatasetRecord rec = run_scenario(sc);
  EXPECT_EQ(rec.version, kRecordVersion);
  EXPECT_TRUE(rec.lidar.empty());
  EXPECT_TRUE(rec.camera.empty());
  EXPECT_TRUE(rec.imu.empty());
  EXPECT_TRUE(rec.complete);
}

TEST(Scenario, FrameCountsPosesAndDeterminism) {
  Scenario sc = quiet_scenario(2.05);
  sc.lidar_noise_m = 0.004;
  sc.drift.walk_sigma_m = 0.002;
  const DatasetRecord a = run_scenario(sc);
  EXPECT_EQ(a.lidar.size(), 20u);
  EXPECT_EQ(a.camera.size(), 41u);
  EXPECT_EQ(a.imu.size(), 412u);  // half-tick stamps plus one leading sample
  EXPECT_NEAR(a.imu.front().timestamp, -0.5 / sc.imu_rate_hz, 1e-15);

  // Independent fold of the action script.
  AckermannState s = sc.vehicle0;
  const double dt = 1.0 / sc.imu_rate_hz;
  for (int k = 0; k < 400; ++k) {
    if (k % 20 == 0) {
      const auto& f = a.lidar[k / 20];
      EXPECT_EQ(f.real_pose.translation().x(), s.pose.x);
      EXPECT_EQ(f.real_pose.translation().y(), s.pose.y);
    }
    Action act;
    for (const auto& ta : sc.actions)
      if (ta.t <= k * dt) act = ta.action;
    s = ackermann_step(s, act, dt, sc.motion);
  }

  const DatasetRecord b = run_scenario(sc);
  EXPECT_EQ(a.lidar, b.lidar);
  EXPECT_EQ(a.camera, b.camera);
  EXPECT_EQ(a.imu.size(), b.imu.size());
  for (std::size_t i = 0; i < a.imu.size(); ++i) {
    EXPECT_EQ(a.imu[i].accel, b.imu[i].accel);
    EXPECT_EQ(a.imu[i].gyro, b.imu[i].gyro);
  }
}

TEST(Scenario, ConsistentTruthWithoutNoiseOrDrift) {
  Scenario sc = quiet_scenario(1.0);
  sc.calibration = RigidTransform::planar(0.2, 0.5, -0.3);
  const DatasetRecord rec = run_scenario(sc);
  ASSERT_FALSE(rec.lidar.empty());
  for (const auto& f : rec.lidar) {
    LidarScan vw = f.virt;
    for (auto& p : vw.points) p = f.virtual_pose.apply(p);
    NavState st;
    st.p = f.real_pose.translation();
    st.q = f.real_pose.quaternion();
    MatchingErrorConfig mc;
    mc.plane_tol = 1e-9;
    const MatchingError m = matching_error(f.real, vw, st, f.ext_true, mc);
    EXPECT_LT(m.mean, 1e-9);
    EXPECT_GT(3 * m.used, vw.size());
  }
  int checked = 0;
  for (const auto& c : rec.camera) {
    const CameraModel cam_r = sc.camera.model(sc.body_pose(c.state.pose), sc.lidar_height_m);
    for (const auto& l : c.labels) {
      // Landmark world point from the virtual pixel via the real-world ground.
      const Vec2 r = c.warp.apply(l);
      bool found = false;
      for (const auto& lm : sc.landmarks) {
        const Vec3 p = c.ext_true.inverse().apply(lm);
        if (cam_r.pose.apply(p).z() <= 0) continue;
        if ((project_point(cam_r, p) - r).norm() < 1e-9) found = true;
      }
      EXPECT_TRUE(found);
      ++checked;
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Scenario, NoiselessImuDeadReckonsTheRecordedPath) {
  Scenario sc = reference_scenario();
  sc.duration_s = 6.0;
  sc.imu = {};
  sc.camera_enabled = false;
  sc.lidar.azimuth_steps = 16;
  const DatasetRecord rec = run_scenario(sc);
  // Start from the mean of the two step velocities around t = 0.
  TruthRollout roll(sc);
  const double dt = 1.0 / sc.imu_rate_hz;
  const auto& s0 = roll.tick(0);
  const double w0 = s0.speed * std::tan(sc.actions.front().action.steer) / s0.wheelbase;
  NavState x;
  x.p = rec.lidar[0].real_pose.translation();
  x.q = rec.lidar[0].real_pose.quaternion();
  x.v = 0.5 * s0.speed * (Vec3(std::cos(s0.pose.theta), std::sin(s0.pose.theta), 0) +
                          Vec3(std::cos(s0.pose.theta - w0 * dt), std::sin(s0.pose.theta - w0 * dt), 0));
  // Steering steps at t = 2.5 and 5 fall inside the interval.
  for (std::size_t i = 1; i < rec.lidar.size(); ++i) {
    const auto slice = slice_imu(rec.imu, rec.lidar[i - 1].t, rec.lidar[i].t, SliceEndpoints::Nearest);
    x = forward_propagate(x, Covariance::initial(), slice, rec.lidar[i].t - rec.lidar[i - 1].t, {}).state;
    EXPECT_LT((x.p - rec.lidar[i].real_pose.translation()).norm(), 1e-5) << i;
    EXPECT_LT(rotation_log(x.q.matrix().transpose() * rec.lidar[i].real_pose.rotation()).norm(), 1e-9) << i;
  }
}

TEST(Scenario, LeavingBoundsAbortsWithPartialRecord) {
  Scenario sc = quiet_scenario(6.0);
  sc.actions = {{0.0, Action{0.0, 0.5, 0.0}}};
  sc.bounds_m = 1.8;
  sc.camera_enabled = false;
  try {
    (void)run_scenario(sc);
    FAIL();
  } catch (const ScenarioAbortError& e) {
    EXPECT_EQ(e.code(), ErrorCode::ScenarioAbort);
    EXPECT_FALSE(e.partial().complete);
    EXPECT_GT(e.partial().lidar.size(), 0u);
    EXPECT_LT(e.partial().lidar.size(), 60u);
    for (const auto& f : e.partial().lidar) EXPECT_LE(std::abs(f.real_pose.translation().x()), 1.8);
  }
}

TEST(Scenario, ReferencePathStaysInsideRoom) {
  Scenario sc = reference_scenario();
  sc.duration_s = 30.0;
  TruthRollout roll(sc);
  const long n = static_cast<long>(sc.duration_s * sc.imu_rate_hz);
  double rmax = 0.0;
  for (long k = 0; k <= n; ++k) {
    const auto& s = roll.tick(k);
    rmax = std::max(rmax, std::hypot(s.pose.x, s.pose.y));
    for (const auto& b : sc.world.boxes) ASSERT_FALSE(b.contains(Vec3(s.pose.x, s.pose.y, 0.25)));
  }
  EXPECT_LT(rmax, 2.8);
}
