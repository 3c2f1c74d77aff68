#pragma once

#include <array>
#include <cmath>
#include <limits>

#include "lfp/common.hpp"

namespace lfp {

/// Planar pose; heading in radians, counter-clockwise from +x.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  /// World point into this pose's frame.
  Vec3 to_local(const Vec3& p) const {
    const double c = std::cos(heading), s = std::sin(heading);
    const double dx = p.x - x, dy = p.y - y;
    return {c * dx + s * dy, -s * dx + c * dy, p.z};
  }

  Vec3 to_world(const Vec3& p) const {
    const double c = std::cos(heading), s = std::sin(heading);
    return {x + c * p.x - s * p.y, y + s * p.x + c * p.y, p.z};
  }

  friend bool operator==(const Pose2&, const Pose2&) = default;
};

/// Box resting on its footprint; extent = (length along yaw, width, height).
struct OrientedBox {
  Vec3 center;
  double yaw = 0.0;
  Vec3 extent;

  Vec3 to_local(const Vec3& p) const { return Pose2{center.x, center.y, yaw}.to_local(p); }

  bool contains_xy(const Vec3& p) const {
    const Vec3 q = to_local(p);
    return std::abs(q.x) <= 0.5 * extent.x && std::abs(q.y) <= 0.5 * extent.y;
  }

  bool contains(const Vec3& p) const {
    return contains_xy(p) && std::abs(p.z - center.z) <= 0.5 * extent.z;
  }

  std::array<Vec3, 4> corners_xy() const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    const double hx = 0.5 * extent.x, hy = 0.5 * extent.y;
    std::array<Vec3, 4> out;
    const double sx[4] = {1, -1, -1, 1};
    const double sy[4] = {1, 1, -1, -1};
    for (int k = 0; k < 4; ++k) {
      out[k] = {center.x + c * sx[k] * hx - s * sy[k] * hy, center.y + s * sx[k] * hx + c * sy[k] * hy, 0.0};
    }
    return out;
  }

  friend bool operator==(const OrientedBox&, const OrientedBox&) = default;
};

/// Does the closed segment a-b touch the box footprint? Liang-Barsky clip in
/// the box frame.
inline bool segment_intersects_box_xy(const Vec3& a, const Vec3& b, const OrientedBox& box) {
  const Vec3 p = box.to_local(a);
  const Vec3 q = box.to_local(b);
  const double dx = q.x - p.x, dy = q.y - p.y;
  const double hx = 0.5 * box.extent.x, hy = 0.5 * box.extent.y;
  double t0 = 0.0, t1 = 1.0;
  auto clip = [&](double denom, double num) {
    // Constraint: denom * t <= num.
    if (denom == 0.0) return num >= 0.0;
    const double t = num / denom;
    if (denom > 0) {
      t1 = std::min(t1, t);
    } else {
      t0 = std::max(t0, t);
    }
    return t0 <= t1;
  };
  return clip(dx, hx - p.x) && clip(-dx, hx + p.x) && clip(dy, hy - p.y) && clip(-dy, hy + p.y);
}

/// Separating-axis test between two box footprints.
inline bool boxes_overlap_xy(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners_xy();
  const auto cb = b.corners_xy();
  for (const OrientedBox* box : {&a, &b}) {
    for (int k = 0; k < 2; ++k) {
      const double ang = box->yaw + k * 0.5 * kPi;
      const double ux = std::cos(ang), uy = std::sin(ang);
      double amin = std::numeric_limits<double>::infinity(), amax = -amin;
      double bmin = amin, bmax = -amin;
      for (const auto& c : ca) {
        const double d = c.x * ux + c.y * uy;
        amin = std::min(amin, d);
        amax = std::max(amax, d);
      }
      for (const auto& c : cb) {
        const double d = c.x * ux + c.y * uy;
        bmin = std::min(bmin, d);
        bmax = std::max(bmax, d);
      }
      if (amax < bmin || bmax < amin) return false;
    }
  }
  return true;
}

/// Constant-curvature centerline: a straight segment (curvature 0) or a
/// circular arc. Positive curvature turns left.
struct LaneGeometry {
  Vec3 start;
  double heading = 0.0;
  double curvature = 0.0;
  double length = 0.0;

  double heading_at(double s) const { return heading + curvature * s; }

  Vec3 point_at(double s) const {
    if (curvature == 0.0) return {start.x + s * std::cos(heading), start.y + s * std::sin(heading), start.z};
    const double r = 1.0 / curvature;
    const double h = heading_at(s);
    return {start.x + r * (std::sin(h) - std::sin(heading)), start.y - r * (std::cos(h) - std::cos(heading)),
            start.z};
  }

  /// Point offset sideways; positive is to the left of travel.
  Vec3 offset_point(double s, double lateral) const {
    const Vec3 c = point_at(s);
    const double h = heading_at(s);
    return {c.x - lateral * std::sin(h), c.y + lateral * std::cos(h), c.z};
  }

  /// Arc length of the closest centerline point, clamped to [0, length].
  double project(const Vec3& p) const {
    if (curvature == 0.0) {
      const double s = (p.x - start.x) * std::cos(heading) + (p.y - start.y) * std::sin(heading);
      return std::clamp(s, 0.0, length);
    }
    const double r = 1.0 / curvature;
    const Vec3 center{start.x - r * std::sin(heading), start.y + r * std::cos(heading), 0.0};
    // Angle of the start point seen from the center, then the query point.
    const double a0 = std::atan2(start.y - center.y, start.x - center.x);
    const double a = std::atan2(p.y - center.y, p.x - center.x);
    double da = wrap_angle(a - a0);
    if (curvature < 0) da = -da;
    // Points behind the start map to negative sweep; clamp either end.
    const double sweep = std::abs(curvature) * length;
    if (da < 0 && da < -(2 * kPi - sweep) / 2) da += 2 * kPi;
    const double s = da / std::abs(curvature);
    return std::clamp(s, 0.0, length);
  }

  friend bool operator==(const LaneGeometry&, const LaneGeometry&) = default;
};

}  // namespace lfp
