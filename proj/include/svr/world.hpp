#pragma once

// Piecewise-planar world: ground, bounded planes and oriented boxes, with
// analytic ray casting for lidar scans and flat-shaded camera frames.

#include <limits>
#include <optional>
#include <vector>

#include "svr/geom.hpp"
#include "svr/lidar.hpp"
#include "svr/rng.hpp"
#include "svr/synthesis.hpp"

namespace svr {

enum class SurfaceClass : std::uint8_t { None = 0, Ground = 1, Wall = 2, Static = 3, Obstacle = 4 };

/// {x | normal . x = offset}, clipped to a rectangle around `center`.
struct BoundedPlane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  Vec3 center = Vec3::Zero();  // on the plane
  Vec3 axis_u = Vec3::UnitX();  // in-plane, unit
  double half_u = 1.0;
  double half_v = 1.0;
  SurfaceClass cls = SurfaceClass::Wall;

  [[nodiscard]] Vec3 axis_v() const { return normal.cross(axis_u); }

  void validate() const {
    if (std::abs(normal.norm() - 1.0) > 1e-9 || std::abs(axis_u.norm() - 1.0) > 1e-9 ||
        std::abs(normal.dot(axis_u)) > 1e-9)
      throw Error(ErrorCode::InvalidArgument, "plane: normal and axis must be orthonormal");
    if (!(half_u > 0.0) || !(half_v > 0.0)) throw Error(ErrorCode::InvalidArgument, "plane: extents must be positive");
    if (std::abs(normal.dot(center) - offset) > 1e-9) throw Error(ErrorCode::InvalidArgument, "plane: center off plane");
  }
};

struct OrientedBox {
  RigidTransform pose;  // box frame -> world
  Vec3 half = Vec3::Constant(0.5);
  SurfaceClass cls = SurfaceClass::Static;

  [[nodiscard]] bool contains(const Vec3& p) const {
    const Vec3 l = pose.inverse().apply(p);
    return (l.cwiseAbs() - half).maxCoeff() < 0.0;
  }

  void validate() const {
    if (!(half.minCoeff() > 0.0)) throw Error(ErrorCode::InvalidArgument, "box: extents must be positive");
  }
};

struct WorldModel {
  bool ground = true;  // z = 0, visible from above
  std::vector<BoundedPlane> planes;
  std::vector<OrientedBox> boxes;

  void validate() const {
    for (const auto& p : planes) p.validate();
    for (const auto& b : boxes) b.validate();
  }

  /// Throws when `p` is below the ground or inside a box.
  void check_free(const Vec3& p) const {
    if (ground && p.z() <= 0.0) throw Error(ErrorCode::InvalidPose, "sensor below the ground plane");
    for (const auto& b : boxes)
      if (b.contains(p)) throw Error(ErrorCode::InvalidPose, "sensor inside solid geometry");
  }
};

struct RayHit {
  double range = 0.0;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  SurfaceClass cls = SurfaceClass::None;
  int primitive = -1;  // -1 ground, then planes, then boxes
};

inline constexpr double kMinRange = 1e-9;

[[nodiscard]] inline std::optional<RayHit> intersect_ground(const Vec3& o, const Vec3& d) {
  if (!(d.z() < 0.0) || !(o.z() > 0.0)) return std::nullopt;
  const double t = -o.z() / d.z();
  Vec3 p = o + t * d;
  p.z() = 0.0;
  return RayHit{t, p, Vec3::UnitZ(), SurfaceClass::Ground, -1};
}

[[nodiscard]] inline std::optional<RayHit> intersect_plane(const BoundedPlane& pl, const Vec3& o, const Vec3& d) {
  const double den = pl.normal.dot(d);
  if (std::abs(den) < 1e-12) return std::nullopt;
  const double t = (pl.offset - pl.normal.dot(o)) / den;
  if (!(t > kMinRange)) return std::nullopt;
  const Vec3 p = o + t * d;
  const Vec3 rel = p - pl.center;
  if (std::abs(rel.dot(pl.axis_u)) > pl.half_u || std::abs(rel.dot(pl.axis_v())) > pl.half_v) return std::nullopt;
  return RayHit{t, p, den < 0.0 ? pl.normal : Vec3(-pl.normal), pl.cls, 0};
}

/// Slab test in the box frame; entry hits only (origin outside the box).
[[nodiscard]] inline std::optional<RayHit> intersect_box(const OrientedBox& b, const Vec3& o, const Vec3& d) {
  const Mat3& r = b.pose.rotation();
  const Vec3 lo = r.transpose() * (o - b.pose.translation());
  const Vec3 ld = r.transpose() * d;
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(ld(i)) < 1e-15) {
      if (std::abs(lo(i)) > b.half(i)) return std::nullopt;
      continue;
    }
    double ta = (-b.half(i) - lo(i)) / ld(i);
    double tb = (b.half(i) - lo(i)) / ld(i);
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = i;
    }
    t1 = std::min(t1, tb);
  }
  if (axis < 0 || t0 > t1 || !(t0 > kMinRange)) return std::nullopt;
  Vec3 ln = Vec3::Zero();
  ln(axis) = ld(axis) > 0.0 ? -1.0 : 1.0;
  return RayHit{t0, o + t0 * d, r * ln, b.cls, 0};
}

/// Nearest hit along the unit direction `d` within `max_range`.
[[nodiscard]] inline std::optional<RayHit> cast_ray(const WorldModel& w, const Vec3& o, const Vec3& d,
                                                    double max_range = std::numeric_limits<double>::infinity()) {
  std::optional<RayHit> best;
  auto consider = [&](std::optional<RayHit> h, int id) {
    if (h && h->range <= max_range && (!best || h->range < best->range)) {
      h->primitive = id;
      best = h;
    }
  };
  if (w.ground) consider(intersect_ground(o, d), -1);
  for (std::size_t i = 0; i < w.planes.size(); ++i) consider(intersect_plane(w.planes[i], o, d), static_cast<int>(i));
  for (std::size_t i = 0; i < w.boxes.size(); ++i)
    consider(intersect_box(w.boxes[i], o, d), static_cast<int>(w.planes.size() + i));
  return best;
}

// ---------------------------------------------------------------------------
// Lidar

struct LidarPattern {
  int rings = 16;
  int azimuth_steps = 180;
  double min_elevation = -15.0 * kPi / 180.0;
  double max_elevation = 15.0 * kPi / 180.0;
  double max_range = 30.0;

  [[nodiscard]] int rays() const { return rings * azimuth_steps; }

  /// Unit direction in the sensor frame for ring r, column j.
  [[nodiscard]] Vec3 direction(int r, int j) const {
    const double e = rings > 1 ? min_elevation + (max_elevation - min_elevation) * r / (rings - 1) : 0.0;
    const double a = 2.0 * kPi * j / azimuth_steps;
    return {std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)};
  }
};

/// Scan in the sensor frame, ring by ring in azimuth order; rays without a
/// hit are omitted. `sensor_pose` maps sensor to world coordinates.
[[nodiscard]] inline LidarScan generate_scan(const WorldModel& world, const RigidTransform& sensor_pose,
                                             const LidarPattern& pattern, double noise_sigma, std::uint64_t seed) {
  if (pattern.rays() < 16 || pattern.rings < 1) throw Error(ErrorCode::InvalidArgument, "generate_scan: fewer than 16 rays");
  if (noise_sigma < 0.0) throw Error(ErrorCode::InvalidArgument, "generate_scan: negative noise");
  const Vec3 o = sensor_pose.translation();
  world.check_free(o);
  Rng rng(seed);
  LidarScan scan;
  const Mat3& r = sensor_pose.rotation();
  for (int ring = 0; ring < pattern.rings; ++ring)
    for (int j = 0; j < pattern.azimuth_steps; ++j) {
      const Vec3 dl = pattern.direction(ring, j);
      const auto hit = cast_ray(world, o, r * dl, pattern.max_range);
      const double noise = rng.normal(noise_sigma);
      if (!hit) continue;
      scan.push_back((hit->range + noise) * dl, static_cast<std::uint16_t>(ring),
                     hit->cls == SurfaceClass::Obstacle ? kLabelObstacle : kLabelStatic);
    }
  return scan;
}

// ---------------------------------------------------------------------------
// Camera

/// Unit viewing ray of pixel (x, y) in world coordinates.
[[nodiscard]] inline Vec3 pixel_ray(const CameraModel& cam, double x, double y) {
  const Vec3 dc((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
  return (cam.pose.rotation().transpose() * dc).normalized();
}

[[nodiscard]] inline Vec3 camera_center(const CameraModel& cam) { return cam.pose.inverse().translation(); }

/// Homography taking pixels of `from` to pixels of `to` for points on z = 0.
[[nodiscard]] inline PerspectiveTransform ground_homography(const CameraModel& from, const CameraModel& to) {
  auto plane_map = [](const CameraModel& c) {
    Mat3 m;
    m.col(0) = c.pose.rotation().col(0);
    m.col(1) = c.pose.rotation().col(1);
    m.col(2) = c.pose.translation();
    return Mat3(c.intrinsics() * m);
  };
  const Mat3 a = plane_map(from);
  if (std::abs(a.determinant()) < 1e-12)
    throw Error(ErrorCode::DegenerateConfiguration, "ground_homography: camera center on the ground plane");
  return PerspectiveTransform(plane_map(to) * a.inverse());
}

struct RenderResult {
  Image image;
  Mask object;  // obstacle pixels
  Mask ground;  // ground pixels
  PromptBoxes prompts;
  std::optional<PerspectiveTransform> warp;  // ground-plane map to the paired camera
};

namespace detail {

inline std::array<double, 3> class_color(SurfaceClass c) {
  switch (c) {
    case SurfaceClass::Ground: return {150, 150, 140};
    case SurfaceClass::Wall: return {200, 190, 170};
    case SurfaceClass::Static: return {90, 120, 200};
    case SurfaceClass::Obstacle: return {220, 60, 40};
    default: return {30, 30, 40};
  }
}

}  // namespace detail

/// Flat-shaded raster by per-pixel ray casting through pixel centers. The
/// ground carries a 0.5 m checker so registration has texture to follow.
[[nodiscard]] inline RenderResult render_frame(const WorldModel& world, const CameraModel& cam,
                                               const CameraModel* paired = nullptr) {
  cam.validate();
  world.check_free(camera_center(cam));
  const Vec3 o = camera_center(cam);
  const Vec3 light = Vec3(0.3, 0.5, 0.8).normalized();
  RenderResult out{Image(cam.width, cam.height, 3, 0), Mask(cam.width, cam.height), Mask(cam.width, cam.height), {}, {}};
  std::vector<Mask> per_box(world.boxes.size());
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const auto hit = cast_ray(world, o, pixel_ray(cam, x, y));
      auto col = detail::class_color(hit ? hit->cls : SurfaceClass::None);
      double shade = 1.0;
      if (hit) {
        shade = 0.55 + 0.45 * std::abs(hit->normal.dot(light));
        if (hit->cls == SurfaceClass::Ground) {
          out.ground.at(x, y) = 1;
          const long cx = static_cast<long>(std::floor(hit->point.x() / 0.5));
          const long cy = static_cast<long>(std::floor(hit->point.y() / 0.5));
          if ((cx + cy) & 1) shade *= 0.6;
        }
        if (hit->cls == SurfaceClass::Obstacle) {
          out.object.at(x, y) = 1;
          const int bi = hit->primitive - static_cast<int>(world.planes.size());
          if (bi >= 0) {
            if (per_box[bi].bits.empty()) per_box[bi] = Mask(cam.width, cam.height);
            per_box[bi].at(x, y) = 1;
          }
        }
      }
      for (int c = 0; c < 3; ++c)
        out.image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(col[c] * shade + 0.5), 0.0, 255.0));
    }
  for (const auto& m : per_box) {
    if (m.bits.empty()) continue;
    if (const auto b = mask_bbox(m, static_cast<int>(SurfaceClass::Obstacle))) out.prompts.boxes.push_back(*b);
  }
  if (paired) out.warp = ground_homography(cam, *paired);
  return out;
}

}  // namespace svr
