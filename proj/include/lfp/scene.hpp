#pragma once

// Synthetic driving scenes: lane layout, static agents and roadside clutter,
// ground-truth double-edge annotation, surface-sampled LiDAR, and per-view
// semantic feature grids that stand in for an image backbone.

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "lfp/common.hpp"
#include "lfp/double_edge.hpp"
#include "lfp/geometry.hpp"

namespace lfp {

enum class GeometryKind { straight, arc, intersection };
enum class SignalState { none, green, red };

inline const char* to_string(GeometryKind g) {
  switch (g) {
    case GeometryKind::straight: return "straight";
    case GeometryKind::arc: return "arc";
    case GeometryKind::intersection: return "intersection";
  }
  return "?";
}

inline const char* to_string(SignalState s) {
  switch (s) {
    case SignalState::none: return "none";
    case SignalState::green: return "green";
    case SignalState::red: return "red";
  }
  return "?";
}

inline std::optional<GeometryKind> geometry_from_string(std::string_view s) {
  if (s == "straight") return GeometryKind::straight;
  if (s == "arc") return GeometryKind::arc;
  if (s == "intersection") return GeometryKind::intersection;
  return std::nullopt;
}

inline std::optional<SignalState> signal_from_string(std::string_view s) {
  if (s == "none") return SignalState::none;
  if (s == "green") return SignalState::green;
  if (s == "red") return SignalState::red;
  return std::nullopt;
}

/// Class index used by the signal head and its cross-entropy target.
inline int signal_class(SignalState s) { return static_cast<int>(s); }
inline constexpr int kSignalClasses = 3;

struct SceneSpec {
  std::uint64_t seed = 42;
  int lane_count = 1;
  GeometryKind geometry = GeometryKind::straight;
  double radius = 0.0;  // arc only; the road bends right with this ego-lane radius
  double lane_width = 3.5;
  double route_length = 50.0;
  int agent_count = 0;
  double clutter_density = 0.0;  // objects per 100 m^2 of roadside band
  SignalState traffic_signal = SignalState::none;
  double roadblock_at = -1.0;  // negative disables; else a box across every through lane at this arc length

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

/// Generation knobs that are not part of a scene's identity.
struct SynthConfig {
  int n_d = 6;
  int n_p = 20;
  double cruise_speed = 6.0;
  double min_agent_distance = 10.0;
  double roadside_band = 12.0;
  double stop_margin = 3.0;
  double brake_decel = 2.0;
  Vec3 agent_extent{4.5, 1.8, 1.5};
};

inline std::vector<std::string> validate(const SceneSpec& s) {
  std::vector<std::string> out;
  if (s.lane_count < 1) out.push_back("lane_count must be >= 1");
  if (!(s.lane_width > 0)) out.push_back("lane_width must be > 0");
  if (!(s.route_length > 0)) out.push_back("route_length must be > 0");
  if (s.agent_count < 0) out.push_back("agent_count must be >= 0");
  if (!(s.clutter_density >= 0)) out.push_back("clutter_density must be >= 0");
  if (s.geometry == GeometryKind::arc && !(s.radius > s.lane_width)) {
    out.push_back("radius must exceed lane_width for arc geometry");
  }
  if (s.geometry == GeometryKind::intersection && !(s.route_length > 4 * s.lane_width + 2)) {
    out.push_back("route_length too short to hold the intersection");
  }
  return out;
}

struct SceneLane {
  LaneGeometry geometry;
  double width = 3.5;
  int intersection = 0;
  int direction = 1;
  bool through = true;  // runs along the ego route; crossing lanes are not

  friend bool operator==(const SceneLane&, const SceneLane&) = default;
};

struct Scene {
  SceneSpec spec;
  std::vector<SceneLane> lanes;
  std::vector<OrientedBox> agents;
  std::vector<OrientedBox> clutter;
  Pose2 start;
  Vec3 target;
  int route_lane = 0;
  SignalState signal = SignalState::none;
  double signal_s = -1.0;  // stop line arc length on the route lane, negative if none
  double cruise_speed = 6.0;
  DoubleEdgeSet ground_truth;
  double gt_speed = 0.0;

  const LaneGeometry& route() const { return lanes.at(static_cast<std::size_t>(route_lane)).geometry; }
  double route_width() const { return lanes.at(static_cast<std::size_t>(route_lane)).width; }

  std::vector<std::vector<Vec3>> centerlines(double spacing = 0.5) const {
    std::vector<std::vector<Vec3>> out;
    for (const auto& lane : lanes) {
      const auto& g = lane.geometry;
      const int steps = std::max(1, static_cast<int>(std::ceil(g.length / spacing)));
      std::vector<Vec3> pts;
      for (int k = 0; k <= steps; ++k) pts.push_back(g.point_at(g.length * k / steps));
      out.push_back(std::move(pts));
    }
    return out;
  }

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Agent boxes plus a dummy "ego" box test for a pose; used by generation and the simulator.
inline OrientedBox ego_footprint(const Pose2& pose, double wheelbase = 2.5) {
  const double cx = pose.x + 0.5 * wheelbase * std::cos(pose.heading);
  const double cy = pose.y + 0.5 * wheelbase * std::sin(pose.heading);
  return {{cx, cy, 0.75}, pose.heading, {4.5, 1.8, 1.5}};
}

namespace detail {

inline std::vector<bool> occupancy_flags(const std::vector<Vec3>& center, const std::vector<OrientedBox>& agents) {
  std::vector<bool> occ(center.size(), false);
  for (std::size_t k = 0; k < center.size(); ++k) {
    const Vec3& a = center[k];
    const Vec3& b = k + 1 < center.size() ? center[k + 1] : center[k];
    for (const auto& box : agents) {
      if (segment_intersects_box_xy(a, b, box)) {
        occ[k] = true;
        break;
      }
    }
  }
  return occ;
}

}  // namespace detail

/// Arc length along the route lane of the ego's closest point.
inline double route_progress(const Scene& scene, const Pose2& pose) {
  return scene.route().project({pose.x, pose.y, 0.0});
}

/// Reference speed at a pose: cruise, tapering to a stop before a red stop line.
inline double reference_speed(const Scene& scene, const Pose2& pose, const SynthConfig& cfg = {}) {
  double v = scene.cruise_speed;
  if (scene.signal == SignalState::red && scene.signal_s >= 0) {
    const double d = scene.signal_s - route_progress(scene, pose);
    if (d > -0.5) v = std::min(v, std::sqrt(2.0 * cfg.brake_decel * std::max(0.0, d - cfg.stop_margin)));
  }
  return v;
}

/// Ground-truth lanes seen from `pose`, expressed in that pose's frame. Lanes
/// along the route are sampled from the ego's projection to their end.
inline DoubleEdgeSet ground_truth_at(const Scene& scene, const Pose2& pose, int n_p) {
  if (n_p <= 0 || n_p % 2 != 0) throw StructuralError("n_p must be positive and even");
  const int half = n_p / 2;
  constexpr double kMinWindow = 1.0;
  DoubleEdgeSet set;
  set.n_p = n_p;
  set.n_d = static_cast<int>(scene.lanes.size());
  const Vec3 ego{pose.x, pose.y, 0.0};
  for (std::size_t i = 0; i < scene.lanes.size(); ++i) {
    const auto& lane = scene.lanes[i];
    const auto& g = lane.geometry;
    double s0 = 0.0;
    if (lane.through) s0 = std::clamp(g.project(ego), 0.0, std::max(0.0, g.length - kMinWindow));
    std::vector<Vec3> center(static_cast<std::size_t>(half));
    std::vector<double> s(static_cast<std::size_t>(half));
    for (int k = 0; k < half; ++k) {
      s[k] = half == 1 ? s0 : s0 + (g.length - s0) * k / (half - 1);
      center[k] = g.point_at(s[k]);
    }
    const auto occ = detail::occupancy_flags(center, scene.agents);
    DoubleEdgeLane out;
    out.intersection = lane.intersection;
    out.direction = lane.direction;
    const int plan = static_cast<int>(i) == scene.route_lane ? 1 : 0;
    for (int k = 0; k < half; ++k) {
      const int o = occ[k] ? 1 : 0;
      out.left.push_back({pose.to_local(g.offset_point(s[k], 0.5 * lane.width)), o, plan});
      out.right.push_back({pose.to_local(g.offset_point(s[k], -0.5 * lane.width)), o, plan});
    }
    set.lanes.push_back(std::move(out));
  }
  return set;
}

inline Scene generate_scene(const SceneSpec& spec, const SynthConfig& cfg = {}) {
  if (auto d = validate(spec); !d.empty()) throw ValidationError(std::move(d));
  Rng rng(derive_seed(spec.seed, "scene"));
  Scene scene;
  scene.spec = spec;
  scene.cruise_speed = cfg.cruise_speed;
  scene.signal = spec.traffic_signal;

  const int n = spec.lane_count;
  const double w = spec.lane_width;
  const double len = spec.route_length;
  const int total_lanes = n + (spec.geometry == GeometryKind::intersection ? 2 : 0);
  if (total_lanes > cfg.n_d) {
    throw GenerationError("scene needs " + std::to_string(total_lanes) + " lane slots but n_d = " +
                          std::to_string(cfg.n_d));
  }
  if (spec.geometry == GeometryKind::arc && len / spec.radius > 0.5 * kPi) {
    throw GenerationError("route sweeps more than 90 degrees; target leaves the sensing range");
  }

  const int same_direction = (n + 1) / 2;
  for (int k = 0; k < n; ++k) {
    SceneLane lane;
    lane.width = w;
    lane.direction = k < same_direction ? 1 : 0;
    lane.geometry.start = {0.0, k * w, 0.0};
    if (spec.geometry == GeometryKind::arc) {
      const double r = spec.radius + k * w;
      lane.geometry.curvature = -1.0 / r;
      lane.geometry.length = len / spec.radius * r;
    } else {
      lane.geometry.length = len;
    }
    scene.lanes.push_back(lane);
  }
  if (spec.geometry == GeometryKind::intersection) {
    const double y_lo = -15.0, y_hi = (n - 1) * w + 15.0;
    SceneLane north{{{0.5 * len + 0.5 * w, y_lo, 0.0}, 0.5 * kPi, 0.0, y_hi - y_lo}, w, 1, 0, false};
    SceneLane south{{{0.5 * len - 0.5 * w, y_hi, 0.0}, -0.5 * kPi, 0.0, y_hi - y_lo}, w, 1, 0, false};
    scene.lanes.push_back(north);
    scene.lanes.push_back(south);
  }

  scene.route_lane = 0;
  scene.target = scene.route().point_at(scene.route().length);
  if (!scene.target.finite()) throw GenerationError("target point unreachable");
  if (spec.traffic_signal != SignalState::none) {
    scene.signal_s = spec.geometry == GeometryKind::intersection ? 0.5 * len - w - 1.0 : 0.5 * len;
  }

  const OrientedBox ego_box = ego_footprint(scene.start);
  const Vec3 ext = cfg.agent_extent;
  for (int a = 0; a < spec.agent_count; ++a) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const auto& g = scene.lanes[rng.below(static_cast<std::uint64_t>(n))].geometry;
      const double hi = std::max(cfg.min_agent_distance, g.length - 3.0);
      const double s = rng.uniform(cfg.min_agent_distance, hi);
      const double lateral = rng.uniform(-0.3, 0.3);
      const double yaw = g.heading_at(s) + rng.uniform(-0.05, 0.05);
      Vec3 c = g.offset_point(s, lateral);
      c.z = 0.5 * ext.z;
      OrientedBox box{c, yaw, ext};
      bool clash = boxes_overlap_xy(box, ego_box);
      for (const auto& other : scene.agents) clash = clash || boxes_overlap_xy(box, other);
      if (!clash) {
        scene.agents.push_back(box);
        placed = true;
      }
    }
    if (!placed) throw GenerationError("could not place agent " + std::to_string(a) + " without overlap");
  }
  if (spec.roadblock_at >= 0) {
    const auto& g = scene.route();
    const double s = std::min(spec.roadblock_at, g.length);
    Vec3 c = g.offset_point(s, 0.5 * (n - 1) * w);
    c.z = 0.75;
    scene.agents.push_back({c, g.heading_at(s), {2.0, n * w + 1.0, 1.5}});
  }

  const int clutter_count =
      static_cast<int>(std::lround(spec.clutter_density * 2.0 * cfg.roadside_band * len / 100.0));
  const double left_edge = (n - 0.5) * w + 1.0;
  const double right_edge = -0.5 * w - 1.0;
  const auto& base = scene.lanes[0].geometry;
  for (int k = 0; k < clutter_count; ++k) {
    const bool left = rng.uniform() < 0.5;
    const bool tree = rng.uniform() < 0.6;
    Vec3 e = tree ? Vec3{1.0, 1.0, rng.uniform(3.0, 6.0)}
                  : Vec3{rng.uniform(4.0, 10.0), rng.uniform(4.0, 8.0), rng.uniform(4.0, 12.0)};
    const double s = rng.uniform(0.0, base.length);
    const double u = rng.uniform();
    const double margin = 0.5 * e.y + u * cfg.roadside_band;
    const double lateral = left ? left_edge + margin : right_edge - margin;
    if (spec.geometry == GeometryKind::arc && lateral <= -spec.radius + 0.5 * e.x) continue;
    Vec3 c = base.offset_point(s, lateral);
    c.z = 0.5 * e.z;
    const OrientedBox box{c, base.heading_at(s), e};
    if (spec.geometry == GeometryKind::intersection && std::abs(c.x - 0.5 * len) < w + 0.5 * std::max(e.x, e.y) + 1.0) {
      continue;  // keep the crossing road clear
    }
    if (boxes_overlap_xy(box, ego_box)) continue;
    scene.clutter.push_back(box);
  }

  scene.ground_truth = ground_truth_at(scene, scene.start, cfg.n_p);
  scene.gt_speed = reference_speed(scene, scene.start, cfg);
  return scene;
}

// ---------------------------------------------------------------------------
// LiDAR

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

namespace detail {

/// n stratified samples over the bilinear patch p00-p10-p11-p01.
inline void sample_patch(const Vec3& p00, const Vec3& p10, const Vec3& p11, const Vec3& p01, long n, Rng& rng,
                         std::vector<Vec3>& out) {
  if (n <= 0) return;
  const double a = (p10 - p00).norm() + 1e-12;
  const double b = (p01 - p00).norm() + 1e-12;
  const long ny = std::max(1L, std::lround(std::sqrt(static_cast<double>(n) * b / a)));
  const long nx = (n + ny - 1) / ny;
  long emitted = 0;
  for (long j = 0; j < ny && emitted < n; ++j) {
    for (long i = 0; i < nx && emitted < n; ++i, ++emitted) {
      const double u = (i + rng.uniform()) / nx;
      const double v = (j + rng.uniform()) / ny;
      out.push_back((1 - u) * (1 - v) * p00 + u * (1 - v) * p10 + u * v * p11 + (1 - u) * v * p01);
    }
  }
}

inline double quad_area(const Vec3& p00, const Vec3& p10, const Vec3& p11, const Vec3& p01) {
  // Planar quads only: split into two triangles via cross products.
  auto tri = [](const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 u = b - a, v = c - a;
    const Vec3 x{u.y * v.z - u.z * v.y, u.z * v.x - u.x * v.z, u.x * v.y - u.y * v.x};
    return 0.5 * x.norm();
  };
  return tri(p00, p10, p11) + tri(p00, p11, p01);
}

inline void sample_box_surfaces(const OrientedBox& box, double density, Rng& rng, std::vector<Vec3>& out) {
  const auto c = box.corners_xy();
  const double z0 = box.center.z - 0.5 * box.extent.z;
  const double z1 = box.center.z + 0.5 * box.extent.z;
  auto at = [&](int k, double z) { return Vec3{c[k].x, c[k].y, z}; };
  for (int k = 0; k < 4; ++k) {
    const int m = (k + 1) % 4;
    const Vec3 p00 = at(k, z0), p10 = at(m, z0), p11 = at(m, z1), p01 = at(k, z1);
    sample_patch(p00, p10, p11, p01, std::lround(quad_area(p00, p10, p11, p01) * density), rng, out);
  }
  const Vec3 t0 = at(0, z1), t1 = at(1, z1), t2 = at(2, z1), t3 = at(3, z1);
  sample_patch(t0, t1, t2, t3, std::lround(quad_area(t0, t1, t2, t3) * density), rng, out);
}

}  // namespace detail

/// Stratified surface sampling of the road, agent and clutter boxes in the
/// scene frame, with isotropic Gaussian jitter.
inline PointCloud render_lidar(const Scene& scene, double density, double noise_sigma, std::uint64_t seed) {
  if (!(density > 0)) throw std::invalid_argument("render_lidar: density must be > 0");
  if (!(noise_sigma >= 0)) throw std::invalid_argument("render_lidar: noise_sigma must be >= 0");
  Rng rng(derive_seed(seed, "lidar"));
  PointCloud cloud;
  auto& pts = cloud.points;
  for (const auto& lane : scene.lanes) {
    const auto& g = lane.geometry;
    const int steps = std::max(1, static_cast<int>(std::ceil(g.length)));
    const double hw = 0.5 * lane.width;
    for (int k = 0; k < steps; ++k) {
      const double s0 = g.length * k / steps, s1 = g.length * (k + 1) / steps;
      const Vec3 p00 = g.offset_point(s0, -hw), p10 = g.offset_point(s1, -hw);
      const Vec3 p11 = g.offset_point(s1, hw), p01 = g.offset_point(s0, hw);
      detail::sample_patch(p00, p10, p11, p01, std::lround(detail::quad_area(p00, p10, p11, p01) * density), rng, pts);
    }
  }
  for (const auto& box : scene.agents) detail::sample_box_surfaces(box, density, rng, pts);
  for (const auto& box : scene.clutter) detail::sample_box_surfaces(box, density, rng, pts);
  if (noise_sigma > 0) {
    for (auto& p : pts) p = p + Vec3{noise_sigma * rng.normal(), noise_sigma * rng.normal(), noise_sigma * rng.normal()};
  }
  return cloud;
}

inline PointCloud transform_cloud(const PointCloud& cloud, const Pose2& pose) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(pose.to_local(p));
  return out;
}

/// "LFPC" magic, u32 count, count x (x, y, z) float32, all little-endian.
inline std::string encode_point_cloud(const PointCloud& cloud) {
  static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");
  std::string out = "LFPC";
  const auto n = static_cast<std::uint32_t>(cloud.size());
  out.append(reinterpret_cast<const char*>(&n), sizeof n);
  for (const auto& p : cloud.points) {
    const float xyz[3] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
    out.append(reinterpret_cast<const char*>(xyz), sizeof xyz);
  }
  return out;
}

inline PointCloud decode_point_cloud(std::string_view bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != "LFPC") throw ParseError("missing LFPC header", "byte 0");
  std::uint32_t n = 0;
  std::memcpy(&n, bytes.data() + 4, sizeof n);
  const std::size_t need = 8 + static_cast<std::size_t>(n) * 12;
  if (bytes.size() != need) {
    throw ParseError("expected " + std::to_string(need) + " bytes for " + std::to_string(n) + " points, got " +
                         std::to_string(bytes.size()),
                     "byte " + std::to_string(std::min(bytes.size(), need)));
  }
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    float xyz[3];
    std::memcpy(xyz, bytes.data() + 8 + 12 * static_cast<std::size_t>(i), sizeof xyz);
    cloud.points.push_back({xyz[0], xyz[1], xyz[2]});
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Per-view feature grids

struct ViewConfig {
  int views = 4;
  int channels = 16;
  int height = 8;  // range bins
  int width = 8;   // azimuth bins
  double fov = 0.5 * kPi;
  double max_range = 40.0;
  int supersample = 3;
};

inline constexpr int kSemanticChannels = 4;
enum SemanticChannel { kLaneMask = 0, kAgentMask = 1, kClutterMask = 2, kSignalChannel = 3 };

/// views x channels x height x width, row-major.
struct ViewFeatureGrid {
  int views = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  ViewFeatureGrid() = default;
  ViewFeatureGrid(int v, int c, int h, int w)
      : views(v), channels(c), height(h), width(w), data(static_cast<std::size_t>(v) * c * h * w, 0.0) {}

  double& at(int v, int c, int y, int x) { return data[index(v, c, y, x)]; }
  double at(int v, int c, int y, int x) const { return data[index(v, c, y, x)]; }
  friend bool operator==(const ViewFeatureGrid&, const ViewFeatureGrid&) = default;

 private:
  std::size_t index(int v, int c, int y, int x) const {
    return ((static_cast<std::size_t>(v) * channels + c) * height + y) * width + x;
  }
};

/// Fixed linear map from semantic channels to feature channels.
struct ViewProjection {
  int channels = 0;
  std::vector<double> weight;  // channels x kSemanticChannels
  std::vector<double> bias;    // channels

  static ViewProjection seeded(std::uint64_t seed, int channels) {
    Rng rng(derive_seed(seed, "view_projection"));
    ViewProjection p;
    p.channels = channels;
    for (int i = 0; i < channels * kSemanticChannels; ++i) p.weight.push_back(rng.uniform(-1.0, 1.0));
    for (int i = 0; i < channels; ++i) p.bias.push_back(rng.uniform(-0.1, 0.1));
    return p;
  }
};

inline double view_yaw(int v) { return 0.5 * kPi * v; }

inline bool on_lane_surface(const Scene& scene, const Vec3& p) {
  for (const auto& lane : scene.lanes) {
    const auto& g = lane.geometry;
    const double s = g.project(p);
    if (s <= 0.0 || s >= g.length) continue;
    const Vec3 c = g.point_at(s);
    if (std::hypot(p.x - c.x, p.y - c.y) <= 0.5 * lane.width) return true;
  }
  return false;
}

/// Semantic raster per view frustum: rows are range bins, columns azimuth
/// bins from left to right across the field of view.
inline ViewFeatureGrid rasterize_semantics(const Scene& scene, const Pose2& pose, const ViewConfig& cfg) {
  ViewFeatureGrid grid(cfg.views, kSemanticChannels, cfg.height, cfg.width);
  const double signal = scene.signal == SignalState::green ? 1.0 : scene.signal == SignalState::red ? -1.0 : 0.0;
  const int ss = std::max(1, cfg.supersample);
  const double inv = 1.0 / (ss * ss);
  for (int v = 0; v < cfg.views; ++v) {
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        double lane = 0, agent = 0, clutter = 0;
        for (int a = 0; a < ss; ++a) {
          for (int b = 0; b < ss; ++b) {
            const double range = cfg.max_range * (y + (a + 0.5) / ss) / cfg.height;
            const double az = 0.5 * cfg.fov - cfg.fov * (x + (b + 0.5) / ss) / cfg.width;
            const double ang = view_yaw(v) + az;
            const Vec3 p = pose.to_world({range * std::cos(ang), range * std::sin(ang), 0.0});
            if (on_lane_surface(scene, p)) lane += inv;
            for (const auto& box : scene.agents) {
              if (box.contains_xy(p)) {
                agent += inv;
                break;
              }
            }
            for (const auto& box : scene.clutter) {
              if (box.contains_xy(p)) {
                clutter += inv;
                break;
              }
            }
          }
        }
        grid.at(v, kLaneMask, y, x) = lane;
        grid.at(v, kAgentMask, y, x) = agent;
        grid.at(v, kClutterMask, y, x) = clutter;
        grid.at(v, kSignalChannel, y, x) = signal;
      }
    }
  }
  return grid;
}

inline ViewFeatureGrid project_semantics(const ViewFeatureGrid& sem, const ViewProjection& proj) {
  ViewFeatureGrid out(sem.views, proj.channels, sem.height, sem.width);
  for (int v = 0; v < sem.views; ++v) {
    for (int c = 0; c < proj.channels; ++c) {
      for (int y = 0; y < sem.height; ++y) {
        for (int x = 0; x < sem.width; ++x) {
          double acc = proj.bias[c];
          for (int s = 0; s < kSemanticChannels; ++s) acc += proj.weight[c * kSemanticChannels + s] * sem.at(v, s, y, x);
          out.at(v, c, y, x) = acc;
        }
      }
    }
  }
  return out;
}

inline ViewFeatureGrid synth_view_features(const Scene& scene, const Pose2& pose, const ViewConfig& cfg,
                                           const ViewProjection& proj) {
  return project_semantics(rasterize_semantics(scene, pose, cfg), proj);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const SceneSpec& s) {
  nlohmann::json j{{"seed", s.seed},
                   {"lane_count", s.lane_count},
                   {"geometry", to_string(s.geometry)},
                   {"lane_width", s.lane_width},
                   {"route_length", s.route_length},
                   {"agent_count", s.agent_count},
                   {"clutter_density", s.clutter_density},
                   {"traffic_signal", to_string(s.traffic_signal)}};
  if (s.geometry == GeometryKind::arc) j["radius"] = s.radius;
  if (s.roadblock_at >= 0) j["roadblock_at"] = s.roadblock_at;
  return j;
}

/// Missing fields keep their defaults; malformed ones raise ParseError naming the field.
inline SceneSpec scene_spec_from_json(const nlohmann::json& j, const std::string& root = "$") {
  if (!j.is_object()) throw ParseError("expected object", root);
  SceneSpec s;
  auto num = [&](const char* key, double& out) {
    if (j.contains(key)) out = detail::as_double(j[key], root + "." + key);
  };
  auto integer = [&](const char* key, int& out) {
    if (j.contains(key)) out = detail::as_int(j[key], root + "." + key);
  };
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) throw ParseError("expected integer", root + ".seed");
    s.seed = j["seed"].get<std::uint64_t>();
  }
  integer("lane_count", s.lane_count);
  integer("agent_count", s.agent_count);
  num("radius", s.radius);
  num("lane_width", s.lane_width);
  num("route_length", s.route_length);
  num("clutter_density", s.clutter_density);
  num("roadblock_at", s.roadblock_at);
  if (j.contains("geometry")) {
    const auto g = j["geometry"].is_string() ? geometry_from_string(j["geometry"].get<std::string>()) : std::nullopt;
    if (!g) throw ParseError("expected one of straight|arc|intersection", root + ".geometry");
    s.geometry = *g;
  }
  if (j.contains("traffic_signal")) {
    const auto t = j["traffic_signal"].is_string() ? signal_from_string(j["traffic_signal"].get<std::string>()) : std::nullopt;
    if (!t) throw ParseError("expected one of none|green|red", root + ".traffic_signal");
    s.traffic_signal = *t;
  }
  return s;
}

inline nlohmann::json box_to_json(const OrientedBox& b) {
  return {{"center", vec3_to_json(b.center)}, {"yaw", b.yaw}, {"extent", vec3_to_json(b.extent)}};
}

inline OrientedBox box_from_json(const nlohmann::json& j, const std::string& at) {
  return {detail::as_vec3(detail::field(j, "center", at), at + ".center"),
          detail::as_double(detail::field(j, "yaw", at), at + ".yaw"),
          detail::as_vec3(detail::field(j, "extent", at), at + ".extent")};
}

inline nlohmann::json to_json(const Scene& s) {
  using nlohmann::json;
  json lanes = json::array();
  const auto center = s.centerlines();
  for (std::size_t i = 0; i < s.lanes.size(); ++i) {
    const auto& l = s.lanes[i];
    json poly = json::array();
    for (const auto& p : center[i]) poly.push_back(vec3_to_json(p));
    lanes.push_back({{"start", vec3_to_json(l.geometry.start)},
                     {"heading", l.geometry.heading},
                     {"curvature", l.geometry.curvature},
                     {"length", l.geometry.length},
                     {"width", l.width},
                     {"int", l.intersection},
                     {"dir", l.direction},
                     {"through", l.through},
                     {"centerline", std::move(poly)}});
  }
  json agents = json::array(), clutter = json::array();
  for (const auto& b : s.agents) agents.push_back(box_to_json(b));
  for (const auto& b : s.clutter) clutter.push_back(box_to_json(b));
  return {{"spec", to_json(s.spec)},
          {"lanes", std::move(lanes)},
          {"agents", std::move(agents)},
          {"clutter", std::move(clutter)},
          {"route",
           {{"start", {{"x", s.start.x}, {"y", s.start.y}, {"heading", s.start.heading}}},
            {"target", vec3_to_json(s.target)},
            {"lane", s.route_lane},
            {"signal_s", s.signal_s}}},
          {"signal_state", to_string(s.signal)},
          {"cruise_speed", s.cruise_speed},
          {"gt_speed", s.gt_speed},
          {"ground_truth", to_json(s.ground_truth)}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  using detail::as_double;
  using detail::as_int;
  using detail::field;
  Scene s;
  s.spec = scene_spec_from_json(field(j, "spec", "$"), "$.spec");
  const auto& lanes = field(j, "lanes", "$");
  if (!lanes.is_array()) throw ParseError("expected array", "$.lanes");
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const std::string at = "$.lanes[" + std::to_string(i) + "]";
    const auto& l = lanes[i];
    SceneLane lane;
    lane.geometry.start = detail::as_vec3(field(l, "start", at), at + ".start");
    lane.geometry.heading = as_double(field(l, "heading", at), at + ".heading");
    lane.geometry.curvature = as_double(field(l, "curvature", at), at + ".curvature");
    lane.geometry.length = as_double(field(l, "length", at), at + ".length");
    lane.width = as_double(field(l, "width", at), at + ".width");
    lane.intersection = as_int(field(l, "int", at), at + ".int");
    lane.direction = as_int(field(l, "dir", at), at + ".dir");
    const auto& through = field(l, "through", at);
    if (!through.is_boolean()) throw ParseError("expected boolean", at + ".through");
    lane.through = through.get<bool>();
    s.lanes.push_back(lane);
  }
  for (const char* key : {"agents", "clutter"}) {
    const auto& arr = field(j, key, "$");
    if (!arr.is_array()) throw ParseError("expected array", std::string("$.") + key);
    auto& dst = std::string_view(key) == "agents" ? s.agents : s.clutter;
    for (std::size_t i = 0; i < arr.size(); ++i) dst.push_back(box_from_json(arr[i], std::string("$.") + key + "[" + std::to_string(i) + "]"));
  }
  const auto& route = field(j, "route", "$");
  const auto& st = field(route, "start", "$.route");
  s.start = {as_double(field(st, "x", "$.route.start"), "$.route.start.x"),
             as_double(field(st, "y", "$.route.start"), "$.route.start.y"),
             as_double(field(st, "heading", "$.route.start"), "$.route.start.heading")};
  s.target = detail::as_vec3(field(route, "target", "$.route"), "$.route.target");
  s.route_lane = as_int(field(route, "lane", "$.route"), "$.route.lane");
  if (s.route_lane < 0 || static_cast<std::size_t>(s.route_lane) >= s.lanes.size()) {
    throw ParseError("route lane out of range", "$.route.lane");
  }
  s.signal_s = as_double(field(route, "signal_s", "$.route"), "$.route.signal_s");
  const auto& sig = field(j, "signal_state", "$");
  const auto parsed = sig.is_string() ? signal_from_string(sig.get<std::string>()) : std::nullopt;
  if (!parsed) throw ParseError("expected one of none|green|red", "$.signal_state");
  s.signal = *parsed;
  s.cruise_speed = as_double(field(j, "cruise_speed", "$"), "$.cruise_speed");
  s.gt_speed = as_double(field(j, "gt_speed", "$"), "$.gt_speed");
  s.ground_truth = double_edge_from_json(field(j, "ground_truth", "$"), "$.ground_truth");
  return s;
}

// ---------------------------------------------------------------------------
// Scene suites

/// Ten mixed scenes covering every geometry, agent/clutter load and signal.
inline std::vector<SceneSpec> reference_suite(std::uint64_t seed) {
  using G = GeometryKind;
  using S = SignalState;
  struct Row {
    G g;
    double radius;
    int lanes;
    int agents;
    double clutter;
    S signal;
  };
  const Row rows[] = {
      {G::straight, 0, 1, 0, 0.5, S::none},      {G::straight, 0, 2, 2, 1.0, S::none},
      {G::straight, 0, 3, 3, 1.0, S::green},     {G::arc, 80, 2, 1, 0.8, S::none},
      {G::arc, 50, 1, 0, 1.5, S::none},          {G::intersection, 0, 2, 2, 1.0, S::green},
      {G::intersection, 0, 1, 0, 0.5, S::red},   {G::straight, 0, 4, 4, 2.0, S::none},
      {G::arc, 120, 3, 2, 0.5, S::green},        {G::straight, 0, 2, 1, 3.0, S::red},
  };
  std::vector<SceneSpec> out;
  for (std::size_t i = 0; i < std::size(rows); ++i) {
    SceneSpec s;
    s.seed = seed + i;
    s.geometry = rows[i].g;
    s.radius = rows[i].radius;
    s.lane_count = rows[i].lanes;
    s.agent_count = rows[i].agents;
    s.clutter_density = rows[i].clutter;
    s.traffic_signal = rows[i].signal;
    out.push_back(s);
  }
  return out;
}

/// Straight, empty roads: one to three lanes, no agents, clutter or signal.
inline std::vector<SceneSpec> trivial_suite(std::uint64_t seed) {
  std::vector<SceneSpec> out;
  for (int k = 0; k < 3; ++k) {
    SceneSpec s;
    s.seed = seed + static_cast<std::uint64_t>(k);
    s.lane_count = k + 1;
    out.push_back(s);
  }
  return out;
}

/// Straight roads closed by a box across every lane.
inline std::vector<SceneSpec> blocked_suite(std::uint64_t seed) {
  std::vector<SceneSpec> out;
  for (int k = 0; k < 2; ++k) {
    SceneSpec s;
    s.seed = seed + static_cast<std::uint64_t>(k);
    s.lane_count = k + 1;
    s.roadblock_at = 25.0;
    out.push_back(s);
  }
  return out;
}

inline std::optional<std::vector<SceneSpec>> suite_by_name(std::string_view name, std::uint64_t seed) {
  if (name == "reference") return reference_suite(seed);
  if (name == "trivial") return trivial_suite(seed);
  if (name == "blocked") return blocked_suite(seed);
  return std::nullopt;
}

}  // namespace lfp
