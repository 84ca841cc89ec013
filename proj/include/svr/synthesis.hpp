#pragma once

// Correspondence provision, perspective-transform estimation, warping,
// mask compositing and the object-level fidelity metrics.

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "svr/image.hpp"
#include "svr/motion.hpp"
#include "svr/rng.hpp"

namespace svr {

struct PerspectiveTransform {
  Mat3 h = Mat3::Identity();

  PerspectiveTransform() = default;
  explicit PerspectiveTransform(const Mat3& m) : h(m) {
    if (!h.allFinite() || std::abs(h.determinant()) <= 1e-12)
      throw Error(ErrorCode::DegenerateConfiguration, "perspective transform: singular matrix");
    if (h(2, 2) != 0.0) h /= h(2, 2);
  }

  [[nodiscard]] Vec2 apply(const Vec2& p) const {
    const Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
    return q.head<2>() / q.z();
  }
  [[nodiscard]] PerspectiveTransform inverse() const { return PerspectiveTransform(h.inverse()); }

  friend bool operator==(const PerspectiveTransform& a, const PerspectiveTransform& b) { return a.h == b.h; }
};

struct PromptBoxes {
  std::vector<Box> boxes;

  friend bool operator==(const PromptBoxes&, const PromptBoxes&) = default;

  void validate(int width, int height) const {
    for (const auto& b : boxes) {
      if (b.x0 < 0 || b.y0 < 0 || b.x1 > width || b.y1 > height || b.area() <= 0)
        throw Error(ErrorCode::InvalidArgument, "prompt box out of bounds or empty");
    }
  }
};

struct MatchNoiseConfig {
  int count = 100;
  double jitter_px = 0.5;
  double outlier_fraction = 0.3;
  std::uint64_t seed = 0;
};

/// Samples `count` correspondences: inliers from pixels in `support` pushed
/// through `gt` (virtual -> real) with Gaussian jitter, then round(fraction *
/// count) uniform outlier pairs mixed in at random positions.
[[nodiscard]] inline MatchSet provide_matches(const PerspectiveTransform& gt, const Mask& support, int real_width,
                                              int real_height, const MatchNoiseConfig& cfg) {
  Rng rng(cfg.seed);
  const int n_out = static_cast<int>(std::lround(std::clamp(cfg.outlier_fraction, 0.0, 1.0) * cfg.count));
  const int n_in = std::max(0, cfg.count - n_out);
  std::vector<int> cand;
  for (int i = 0; i < static_cast<int>(support.bits.size()); ++i)
    if (support.bits[i]) cand.push_back(i);

  auto inside = [&](const Vec2& p) {
    return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= real_width - 1 && p.y() <= real_height - 1;
  };

  MatchSet ms;
  if (!cand.empty()) {
    for (int tries = 0; static_cast<int>(ms.pairs.size()) < n_in && tries < 100 * std::max(1, n_in); ++tries) {
      const int idx = cand[rng.index(cand.size())];
      const Vec2 v(std::clamp(idx % support.width + rng.uniform(-0.5, 0.5), 0.0, support.width - 1.0),
                   std::clamp(idx / support.width + rng.uniform(-0.5, 0.5), 0.0, support.height - 1.0));
      const Vec3 q = gt.h * Vec3(v.x(), v.y(), 1.0);
      if (q.z() <= 0.0) continue;
      Vec2 r = q.head<2>() / q.z();
      r += Vec2(rng.normal(cfg.jitter_px), rng.normal(cfg.jitter_px));
      if (!inside(r)) continue;
      ms.pairs.push_back({v, r, 1.0});
    }
  }
  for (int k = 0; k < n_out; ++k) {
    const Vec2 v(rng.uniform(0.0, support.width - 1.0), rng.uniform(0.0, support.height - 1.0));
    const Vec2 r(rng.uniform(0.0, real_width - 1.0), rng.uniform(0.0, real_height - 1.0));
    const double score = rng.uniform();
    const std::size_t at = rng.index(ms.pairs.size() + 1);
    ms.pairs.insert(ms.pairs.begin() + static_cast<std::ptrdiff_t>(at), Match{v, r, score});
  }
  return ms;
}

namespace detail {

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
inline Mat3 hartley_normalizer(const std::vector<Vec2>& pts) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double md = 0.0;
  for (const auto& p : pts) md += (p - c).norm();
  md /= static_cast<double>(pts.size());
  if (!(md > 1e-12)) throw Error(ErrorCode::DegenerateConfiguration, "estimate_pt: coincident points");
  const double s = std::sqrt(2.0) / md;
  Mat3 t;
  t << s, 0.0, -s * c.x(), 0.0, s, -s * c.y(), 0.0, 0.0, 1.0;
  return t;
}

}  // namespace detail

/// Normalized DLT over every supplied match.
[[nodiscard]] inline PerspectiveTransform estimate_pt(const MatchSet& matches) {
  const auto n = matches.pairs.size();
  if (n < 4) throw Error(ErrorCode::InsufficientMatches, "estimate_pt: need at least 4 matches");
  std::vector<Vec2> v, r;
  for (const auto& m : matches.pairs) {
    v.push_back(m.virt);
    r.push_back(m.real);
  }
  const Mat3 tv = detail::hartley_normalizer(v);
  const Mat3 tr = detail::hartley_normalizer(r);

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 x = tv * Vec3(v[i].x(), v[i].y(), 1.0);
    const Vec3 y = tr * Vec3(r[i].x(), r[i].y(), 1.0);
    a.row(2 * i) << 0, 0, 0, -y.z() * x.transpose(), y.y() * x.transpose();
    a.row(2 * i + 1) << y.z() * x.transpose(), 0, 0, 0, -y.x() * x.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A second null direction means the homography is not determined.
  if (sv.size() < 8 || sv(7) <= 1e-10 * sv(0))
    throw Error(ErrorCode::DegenerateConfiguration, "estimate_pt: degenerate point configuration");
  const Eigen::VectorXd hv = svd.matrixV().col(8);
  Mat3 hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  Mat3 h = tr.inverse() * hn * tv;
  if (std::abs(h(2, 2)) > 1e-12 * h.norm()) h /= h(2, 2);
  else h /= h.norm();
  return PerspectiveTransform(h);
}

/// RMS of |pt(virt) - real| over the matches.
[[nodiscard]] inline double reprojection_rms(const PerspectiveTransform& pt, const MatchSet& matches) {
  if (matches.pairs.empty()) throw Error(ErrorCode::MetricUndefined, "reprojection_rms: no matches");
  double s = 0.0;
  for (const auto& m : matches.pairs) s += (pt.apply(m.virt) - m.real).squaredNorm();
  return std::sqrt(s / static_cast<double>(matches.pairs.size()));
}

/// RMS disagreement between two transforms over sample points.
[[nodiscard]] inline double transfer_rms(const PerspectiveTransform& est, const PerspectiveTransform& ref,
                                         const std::vector<Vec2>& pts) {
  if (pts.empty()) throw Error(ErrorCode::MetricUndefined, "transfer_rms: no sample points");
  double s = 0.0;
  for (const auto& p : pts) s += (est.apply(p) - ref.apply(p)).squaredNorm();
  return std::sqrt(s / static_cast<double>(pts.size()));
}

struct WarpResult {
  Image image;
  Mask valid;
};

/// Inverse-mapped bilinear warp into a width x height raster (source size by
/// default). Pixels whose preimage leaves the source are 0 and invalid.
[[nodiscard]] inline WarpResult warp_image(const Image& img, const PerspectiveTransform& pt, int width = -1,
                                           int height = -1) {
  img.validate();
  if (width < 0) width = img.width;
  if (height < 0) height = img.height;
  const Mat3 inv = pt.h.inverse();
  WarpResult out{Image(width, height, img.channels, 0), Mask(width, height, 0)};
  const double xmax = img.width - 1.0;
  const double ymax = img.height - 1.0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Vec3 q = inv * Vec3(x, y, 1.0);
      if (q.z() <= 0.0) continue;
      const double sx = q.x() / q.z();
      const double sy = q.y() / q.z();
      if (!(sx >= 0.0 && sy >= 0.0 && sx <= xmax && sy <= ymax)) continue;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const int y1 = std::min(y0 + 1, img.height - 1);
      const double fx = sx - x0;
      const double fy = sy - y0;
      for (int c = 0; c < img.channels; ++c) {
        const double val = (1.0 - fx) * (1.0 - fy) * img.at(x0, y0, c) + fx * (1.0 - fy) * img.at(x1, y0, c) +
                           (1.0 - fx) * fy * img.at(x0, y1, c) + fx * fy * img.at(x1, y1, c);
        out.image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(val + 0.5), 0.0, 255.0));
      }
      out.valid.at(x, y) = 1;
    }
  return out;
}

/// Negative mask = object mask restricted to the prompt boxes; positive is
/// its exact complement.
[[nodiscard]] inline std::pair<Mask, Mask> masks_from_prompts(const PromptBoxes& prompts, const Mask& gt_object) {
  gt_object.validate();
  Mask neg(gt_object.width, gt_object.height, 0);
  Mask pos(gt_object.width, gt_object.height, 1);
  for (const auto& b : prompts.boxes)
    for (int y = std::max(0, b.y0); y < std::min(b.y1, gt_object.height); ++y)
      for (int x = std::max(0, b.x0); x < std::min(b.x1, gt_object.width); ++x) {
        if (!gt_object.at(x, y)) continue;
        neg.at(x, y) = 1;
        pos.at(x, y) = 0;
      }
  return {neg, pos};
}

/// neg * virtual + pos * real, per channel.
[[nodiscard]] inline Image composite(const Image& virtual_warped, const Image& real, const Mask& neg, const Mask& pos) {
  virtual_warped.validate();
  real.validate();
  neg.validate();
  pos.validate();
  const int w = real.width;
  const int h = real.height;
  if (virtual_warped.width != w || virtual_warped.height != h || virtual_warped.channels != real.channels ||
      neg.width != w || neg.height != h || pos.width != w || pos.height != h)
    throw Error(ErrorCode::ShapeMismatch, "composite: dimension mismatch");
  for (std::size_t i = 0; i < neg.bits.size(); ++i) {
    if (neg.bits[i] + pos.bits[i] != 1) throw Error(ErrorCode::InvalidMask, "composite: masks are not complementary");
  }
  Image out(w, h, real.channels, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < real.channels; ++c)
        out.at(x, y, c) =
            static_cast<std::uint8_t>(neg.at(x, y) * virtual_warped.at(x, y, c) + pos.at(x, y) * real.at(x, y, c));
  return out;
}

/// |d1 - d2| / d1 with d1, d2 the mean label distances to the virtual and
/// synthesized landmarks (index-paired).
[[nodiscard]] inline double object_deviation(const std::vector<Vec2>& labels, const std::vector<Vec2>& virtual_landmarks,
                                             const std::vector<Vec2>& synthesized_landmarks) {
  if (labels.empty() || labels.size() != virtual_landmarks.size() || labels.size() != synthesized_landmarks.size())
    throw Error(ErrorCode::InvalidArgument, "object_deviation: landmark counts differ or are empty");
  double d1 = 0.0;
  double d2 = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    d1 += (labels[i] - virtual_landmarks[i]).norm();
    d2 += (labels[i] - synthesized_landmarks[i]).norm();
  }
  d1 /= static_cast<double>(labels.size());
  d2 /= static_cast<double>(labels.size());
  if (!(d1 > 0.0)) throw Error(ErrorCode::MetricUndefined, "object_deviation: d1 is zero");
  return std::abs(d1 - d2) / d1;
}

struct ObjectOutcome {
  Box gt;
  Mask synthesized;
};

[[nodiscard]] inline bool recognizable(const ObjectOutcome& o, double iou_threshold = 0.5) {
  const auto b = mask_bbox(o.synthesized);
  return b && box_iou(*b, o.gt) >= iou_threshold;
}

[[nodiscard]] inline double recognizable_rate(const std::vector<ObjectOutcome>& objects, double iou_threshold = 0.5) {
  if (objects.empty()) throw Error(ErrorCode::MetricUndefined, "recognizable_rate: no objects");
  int ok = 0;
  for (const auto& o : objects) ok += recognizable(o, iou_threshold) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(objects.size());
}

}  // namespace svr
