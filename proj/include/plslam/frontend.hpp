#pragma once

// Image-free line front-end logic: segment merging, match gating, descriptor
// distance, visibility culling and Liang-Barsky clipping.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <tuple>
#include <vector>

#include "plslam/geometry.hpp"
#include "plslam/measurement.hpp"

namespace plslam {

/// Directed 2D segment (start -> end), pixels.
struct Segment2D {
  Vec2 start = Vec2::Zero();
  Vec2 end = Vec2::UnitX();
  std::optional<Descriptor> descriptor;

  double length() const { return (end - start).norm(); }
  Vec2 direction() const { return (end - start).normalized(); }
  Vec2 midpoint() const { return 0.5 * (start + end); }
};

struct Rect {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  bool contains(const Vec2& p, double eps = 0.0) const {
    return p.x() >= xmin - eps && p.x() <= xmax + eps && p.y() >= ymin - eps && p.y() <= ymax + eps;
  }
};

struct MatchThresholds {
  double max_angle = 0.1;          // radians
  double min_length_ratio = 0.7;   // tau
  double min_overlap_ratio = 0.5;  // beta
  int max_descriptor_distance = 80;
};

struct MergeThresholds {
  double max_angle = 0.035;  // radians
  double max_endpoint_gap = 5.0;  // pixels
  double max_midpoint_distance = 2.0;  // pixels
  int max_descriptor_distance = 80;
};

inline int descriptor_distance(const Descriptor& a, const Descriptor& b) {
  return static_cast<int>((a ^ b).count());
}

/// Angle between the directed segments, in [0, pi].
inline double direction_difference(const Segment2D& a, const Segment2D& b) {
  const double c = std::clamp(a.direction().dot(b.direction()), -1.0, 1.0);
  return std::acos(c);
}

/// Smallest distance between an endpoint of |a| and an endpoint of |b|.
inline double endpoint_gap(const Segment2D& a, const Segment2D& b) {
  return std::min({(a.start - b.start).norm(), (a.start - b.end).norm(), (a.end - b.start).norm(),
                   (a.end - b.end).norm()});
}

/// Distance from the midpoint of the shorter segment to the supporting line
/// of the longer one.
inline double midpoint_distance(const Segment2D& a, const Segment2D& b) {
  const Segment2D& lng = a.length() >= b.length() ? a : b;
  const Segment2D& shrt = a.length() >= b.length() ? b : a;
  const Vec2 d = lng.direction();
  const Vec2 r = shrt.midpoint() - lng.start;
  return std::abs(d.x() * r.y() - d.y() * r.x());
}

/// Length of the part of |a| covered by the orthogonal projection of |b| onto
/// a's supporting line.
inline double projected_overlap(const Segment2D& a, const Segment2D& b) {
  const Vec2 d = a.direction();
  const double t0 = (b.start - a.start).dot(d);
  const double t1 = (b.end - a.start).dot(d);
  const double lo = std::max(0.0, std::min(t0, t1));
  const double hi = std::min(a.length(), std::max(t0, t1));
  return std::max(0.0, hi - lo);
}

/// All four gates: direction, length ratio, overlap ratio and (when both
/// segments carry one) descriptor distance. The overlap is measured both ways
/// and the smaller value is used, so the test is symmetric.
inline bool match_lines(const Segment2D& a, const Segment2D& b, const MatchThresholds& t = {}) {
  const double la = a.length();
  const double lb = b.length();
  if (!(la > 0.0) || !(lb > 0.0)) return false;
  if (!(direction_difference(a, b) < t.max_angle)) return false;
  const double shorter = std::min(la, lb);
  if (!(shorter / std::max(la, lb) > t.min_length_ratio)) return false;
  const double overlap = std::min(projected_overlap(a, b), projected_overlap(b, a));
  if (!(overlap / shorter > t.min_overlap_ratio)) return false;
  if (a.descriptor && b.descriptor &&
      !(descriptor_distance(*a.descriptor, *b.descriptor) < t.max_descriptor_distance)) {
    return false;
  }
  return true;
}

namespace detail {

inline bool mergeable(const Segment2D& a, const Segment2D& b, const MergeThresholds& t) {
  if (!(direction_difference(a, b) < t.max_angle)) return false;
  if (!(endpoint_gap(a, b) < t.max_endpoint_gap)) return false;
  if (!(midpoint_distance(a, b) < t.max_midpoint_distance)) return false;
  if (a.descriptor && b.descriptor &&
      !(descriptor_distance(*a.descriptor, *b.descriptor) < t.max_descriptor_distance)) {
    return false;
  }
  return true;
}

// Spans the extreme endpoints along the longer segment's direction, keeping
// its orientation and descriptor.
inline Segment2D merge_pair(const Segment2D& a, const Segment2D& b) {
  const Segment2D& lng = a.length() >= b.length() ? a : b;
  const Vec2 d = lng.direction();
  const Vec2 candidates[4] = {a.start, a.end, b.start, b.end};
  Vec2 lo = candidates[0];
  Vec2 hi = candidates[0];
  double tlo = (lo - lng.start).dot(d);
  double thi = tlo;
  for (const Vec2& p : candidates) {
    const double t = (p - lng.start).dot(d);
    if (t < tlo) { tlo = t; lo = p; }
    if (t > thi) { thi = t; hi = p; }
  }
  return {lo, hi, lng.descriptor};
}

}  // namespace detail

/// Greedy merging: each pass visits candidate pairs by ascending endpoint gap
/// and merges pairs whose members are still untouched in that pass. Passes
/// repeat until nothing merges.
inline std::vector<Segment2D> merge_segments(std::vector<Segment2D> segments,
                                             const MergeThresholds& t = {}) {
  for (;;) {
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      for (std::size_t j = i + 1; j < segments.size(); ++j) {
        if (detail::mergeable(segments[i], segments[j], t)) {
          pairs.emplace_back(endpoint_gap(segments[i], segments[j]), i, j);
        }
      }
    }
    if (pairs.empty()) return segments;
    std::sort(pairs.begin(), pairs.end());
    std::vector<bool> used(segments.size(), false);
    std::vector<Segment2D> next;
    for (const auto& [gap, i, j] : pairs) {
      if (used[i] || used[j]) continue;
      used[i] = used[j] = true;
      next.push_back(detail::merge_pair(segments[i], segments[j]));
    }
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (!used[i]) next.push_back(segments[i]);
    }
    segments = std::move(next);
  }
}

/// Parametric clipping of |seg| to |rect|; keeps the original orientation.
/// Returns nullopt when nothing of positive length remains inside.
inline std::optional<Segment2D> liang_barsky_clip(const Segment2D& seg, const Rect& rect) {
  const double dx = seg.end.x() - seg.start.x();
  const double dy = seg.end.y() - seg.start.y();
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {seg.start.x() - rect.xmin, rect.xmax - seg.start.x(),
                       seg.start.y() - rect.ymin, rect.ymax - seg.start.y()};
  double t0 = 0.0;
  double t1 = 1.0;
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return std::nullopt;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, r);
    } else {
      t1 = std::min(t1, r);
    }
  }
  if (!(t0 < t1)) return std::nullopt;
  const Vec2 d(dx, dy);
  Segment2D out{seg.start + t0 * d, seg.start + t1 * d, seg.descriptor};
  if (t0 == 0.0) out.start = seg.start;
  if (t1 == 1.0) out.end = seg.end;
  return out;
}

/// Camera-frame near plane used when truncating segments that cross z = 0.
inline constexpr double kNearPlane = 1e-4;

/// Visible part of the world segment (xs_w, xe_w) in an image of the given
/// size, or nullopt when nothing is visible.
inline std::optional<Segment2D> cull_line(const Vec3& xs_w, const Vec3& xe_w, const Pose& pose,
                                          const CameraIntrinsics& k, double width, double height) {
  Vec3 xs = pose * xs_w;
  Vec3 xe = pose * xe_w;
  const bool s_front = xs.z() >= kNearPlane;
  const bool e_front = xe.z() >= kNearPlane;
  if (!s_front && !e_front) return std::nullopt;
  if (!s_front || !e_front) {
    // X_i = X_s + lambda (X_e - X_s) on the near plane.
    const double lambda = (kNearPlane - xs.z()) / (xe.z() - xs.z());
    const Vec3 xi = xs + lambda * (xe - xs);
    (s_front ? xe : xs) = Vec3(xi.x(), xi.y(), kNearPlane);
  }
  const Segment2D projected{k.project(xs), k.project(xe), std::nullopt};
  if (!(projected.length() > 1e-9) || !projected.start.allFinite() || !projected.end.allFinite()) {
    return std::nullopt;
  }
  return liang_barsky_clip(projected, Rect{0.0, 0.0, width, height});
}

/// s = lambda s_p + (1 - lambda) s_l.
inline double combined_similarity(double point_score, double line_score, double weight) {
  return weight * point_score + (1.0 - weight) * line_score;
}

}  // namespace plslam
