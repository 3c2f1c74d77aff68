#pragma once

// Closed-loop evaluation: kinematic bicycle ego, pure-pursuit tracking of the
// interpreted path, infraction bookkeeping and DS/RC/IS scoring.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "lfp/pipeline.hpp"

namespace lfp {

struct ControllerConfig {
  double lookahead = 3.0;
  double wheelbase = 2.5;
  double speed_gain = 1.0;
  double dt = 0.05;
  double max_steer = 0.7;
  double max_accel = 3.0;
};

inline std::vector<std::string> validate(const ControllerConfig& c) {
  std::vector<std::string> out;
  if (!(c.lookahead > 0)) out.push_back("controller.lookahead must be > 0");
  if (!(c.wheelbase > 0)) out.push_back("controller.wheelbase must be > 0");
  if (!(c.speed_gain > 0)) out.push_back("controller.speed_gain must be > 0");
  if (!(c.dt > 0 && c.dt <= 0.1)) out.push_back("controller.dt must lie in (0, 0.1]");
  if (!(c.max_steer > 0)) out.push_back("controller.max_steer must be > 0");
  if (!(c.max_accel > 0)) out.push_back("controller.max_accel must be > 0");
  return out;
}

/// Rear-axle position, heading and speed.
struct EgoState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;

  Pose2 pose() const { return {x, y, heading}; }
  friend bool operator==(const EgoState&, const EgoState&) = default;
};

inline EgoState step_ego(const EgoState& s, double steer, double accel, const ControllerConfig& cfg) {
  if (std::abs(steer) > cfg.max_steer || std::abs(accel) > cfg.max_accel) {
    throw std::invalid_argument("step_ego: control outside actuator limits");
  }
  EgoState n = s;
  n.x += s.speed * std::cos(s.heading) * cfg.dt;
  n.y += s.speed * std::sin(s.heading) * cfg.dt;
  n.heading += s.speed / cfg.wheelbase * std::tan(steer) * cfg.dt;
  n.speed = std::max(0.0, s.speed + accel * cfg.dt);
  return n;
}

struct Controls {
  double steer = 0.0;
  double accel = 0.0;
};

/// Pure pursuit toward the first waypoint, at or after the nearest one, that
/// lies at least `lookahead` away; the last waypoint if none does. `path` is
/// in the world frame. An empty path holds the controls at zero.
inline Controls follow_path(const EgoState& s, const PlannedPath& path, const ControllerConfig& cfg) {
  if (path.empty()) return {};
  const auto& wp = path.waypoints;
  auto dist = [&](const Vec3& p) { return std::hypot(p.x - s.x, p.y - s.y); };
  std::size_t nearest = 0;
  for (std::size_t k = 1; k < wp.size(); ++k) {
    if (dist(wp[k]) < dist(wp[nearest])) nearest = k;
  }
  std::size_t aim = wp.size() - 1;
  for (std::size_t k = nearest; k < wp.size(); ++k) {
    if (dist(wp[k]) >= cfg.lookahead) {
      aim = k;
      break;
    }
  }
  const Vec3 local = s.pose().to_local(wp[aim]);
  const double eta = std::atan2(local.y, local.x);
  Controls c;
  c.steer = std::clamp(std::atan(2.0 * cfg.wheelbase * std::sin(eta) / cfg.lookahead), -cfg.max_steer, cfg.max_steer);
  c.accel = std::clamp(cfg.speed_gain * (path.target_speed - s.speed), -cfg.max_accel, cfg.max_accel);
  return c;
}

// ---------------------------------------------------------------------------
// Scoring

enum class InfractionType { collision_vehicle, collision_static, red_light, route_deviation };

inline const char* to_string(InfractionType t) {
  switch (t) {
    case InfractionType::collision_vehicle: return "collision_vehicle";
    case InfractionType::collision_static: return "collision_static";
    case InfractionType::red_light: return "red_light";
    case InfractionType::route_deviation: return "route_deviation";
  }
  return "?";
}

struct InfractionPenalties {
  double collision_vehicle = 0.60;
  double collision_static = 0.65;
  double red_light = 0.70;
  double route_deviation = 1.0;

  double factor(InfractionType t) const {
    switch (t) {
      case InfractionType::collision_vehicle: return collision_vehicle;
      case InfractionType::collision_static: return collision_static;
      case InfractionType::red_light: return red_light;
      case InfractionType::route_deviation: return route_deviation;
    }
    return 1.0;
  }
};

inline std::vector<std::string> validate(const InfractionPenalties& p) {
  std::vector<std::string> out;
  for (double v : {p.collision_vehicle, p.collision_static, p.red_light, p.route_deviation}) {
    if (!(v > 0 && v <= 1)) {
      out.push_back("penalty factors must lie in (0, 1]");
      break;
    }
  }
  return out;
}

struct InfractionEvent {
  double time = 0.0;
  InfractionType type = InfractionType::collision_vehicle;
  double penalty = 1.0;
};

using InfractionLog = std::vector<InfractionEvent>;

inline double infraction_score(const InfractionLog& log) {
  double is = 1.0;
  for (const auto& e : log) is *= e.penalty;
  return is;
}

/// Furthest route arc-length fraction reached by a trajectory point that lies
/// within `tolerance` of the route centerline.
inline double route_completion(const LaneGeometry& route, double tolerance, const std::vector<Vec3>& trajectory) {
  if (!(route.length > 0)) return 0.0;
  double best = 0.0;
  for (const auto& p : trajectory) {
    const double s = route.project(p);
    const Vec3 c = route.point_at(s);
    if (std::hypot(p.x - c.x, p.y - c.y) <= tolerance) best = std::max(best, s);
  }
  return std::clamp(best / route.length, 0.0, 1.0);
}

/// The first spec.agent_count agents are vehicles; anything appended after
/// them (a roadblock) is static infrastructure.
inline bool is_vehicle(const Scene& scene, std::size_t agent_index) {
  return agent_index < static_cast<std::size_t>(std::max(0, scene.spec.agent_count));
}

struct EvalReport {
  std::string scene_id;
  double ds = 0.0;
  double rc = 0.0;
  double is_score = 1.0;
  InfractionLog infractions;
  std::map<std::string, double> latency_ms;  // per-stage median over ticks
  FeatureCounts feature_counts;
  bool failed = false;
  std::string failure;
  int steps = 0;
  double sim_time = 0.0;
  std::vector<Vec3> trajectory;  // world frame, rear axle
  PlannedPath first_path;        // world frame
  std::vector<Vec3> first_roi;   // world frame, lane ROI of the first frame

  void finalize() {
    is_score = infraction_score(infractions);
    ds = 100.0 * rc * is_score;
  }
};

struct ClosedLoopOptions {
  ControllerConfig controller;
  InfractionPenalties penalties;
  double horizon = 20.0;
  double deviation_widths = 3.0;  // lane widths off the route ...
  double deviation_time = 2.0;    // ... for this long ends the episode
  bool inject_ground_truth = false;
  int jobs = 1;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Nearest-rank percentile, q in [0, 1].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

}  // namespace detail

inline EvalReport run_closed_loop(const Scene& scene, const Pipeline& pipeline, const ClosedLoopOptions& opt = {},
                                  const std::string& scene_id = "") {
  if (!(opt.horizon > 0)) throw std::invalid_argument("run_closed_loop: horizon must be > 0");
  if (auto d = validate(opt.controller); !d.empty()) throw ValidationError(std::move(d));
  const auto& cc = opt.controller;
  EvalReport rep;
  rep.scene_id = scene_id;
  const PointCloud world = pipeline.render(scene);
  const LaneGeometry& route = scene.route();
  const double half_width = 0.5 * scene.route_width();
  FrameOptions fo;
  fo.inject_ground_truth = opt.inject_ground_truth;
  fo.jobs = opt.jobs;

  EgoState ego{scene.start.x, scene.start.y, scene.start.heading, 0.0};
  rep.trajectory.push_back({ego.x, ego.y, 0.0});
  std::vector<bool> hit_agent(scene.agents.size(), false), hit_clutter(scene.clutter.size(), false);
  std::map<std::string, std::vector<double>> stage_samples;
  bool red_logged = false;
  double off_route_since = -1.0;
  double progress = route_progress(scene, ego.pose());
  const int max_steps = static_cast<int>(std::ceil(opt.horizon / cc.dt - 1e-9));

  for (int step = 0; step < max_steps; ++step) {
    const Pose2 pose = ego.pose();
    FrameResult frame;
    try {
      frame = pipeline.run(scene, pose, transform_cloud(world, pose), fo);
    } catch (const std::exception& e) {
      rep.failed = true;
      rep.failure = e.what();
      break;
    }
    for (const auto& [stage, ms] : frame.timings) stage_samples[stage].push_back(ms);
    PlannedPath path{{}, frame.path.target_speed};
    for (const auto& w : frame.path.waypoints) path.waypoints.push_back(pose.to_world(w));
    if (step == 0) {
      rep.first_path = path;
      for (const auto& p : frame.prior.roi.points) rep.first_roi.push_back(pose.to_world(p));
      const PointCloud local = transform_cloud(world, pose);
      rep.feature_counts = feature_count_report(local, frame.prior.roi, pipeline.config().voxel_grid,
                                                pipeline.config().pillar_grid);
    }

    const Controls u = follow_path(ego, path, cc);
    ego = step_ego(ego, u.steer, u.accel, cc);
    ++rep.steps;
    rep.sim_time = rep.steps * cc.dt;
    const Vec3 pos{ego.x, ego.y, 0.0};
    rep.trajectory.push_back(pos);

    const OrientedBox body = ego_footprint(ego.pose(), cc.wheelbase);
    for (std::size_t a = 0; a < scene.agents.size(); ++a) {
      if (!hit_agent[a] && boxes_overlap_xy(body, scene.agents[a])) {
        hit_agent[a] = true;
        const auto type = is_vehicle(scene, a) ? InfractionType::collision_vehicle : InfractionType::collision_static;
        rep.infractions.push_back({rep.sim_time, type, opt.penalties.factor(type)});
      }
    }
    for (std::size_t c = 0; c < scene.clutter.size(); ++c) {
      if (!hit_clutter[c] && boxes_overlap_xy(body, scene.clutter[c])) {
        hit_clutter[c] = true;
        rep.infractions.push_back(
            {rep.sim_time, InfractionType::collision_static, opt.penalties.factor(InfractionType::collision_static)});
      }
    }

    const double s = route.project(pos);
    const double lateral = (pos - route.point_at(s)).norm_xy();
    if (scene.signal == SignalState::red && scene.signal_s >= 0 && !red_logged && progress < scene.signal_s &&
        s >= scene.signal_s && lateral <= opt.deviation_widths * scene.route_width()) {
      red_logged = true;
      rep.infractions.push_back({rep.sim_time, InfractionType::red_light, opt.penalties.factor(InfractionType::red_light)});
    }
    progress = s;

    if (lateral > opt.deviation_widths * scene.route_width()) {
      if (off_route_since < 0) off_route_since = rep.sim_time;
      if (rep.sim_time - off_route_since >= opt.deviation_time - 1e-9) {
        rep.infractions.push_back(
            {rep.sim_time, InfractionType::route_deviation, opt.penalties.factor(InfractionType::route_deviation)});
        break;
      }
    } else {
      off_route_since = -1.0;
    }

    if (lateral <= half_width && s >= route.length) break;
  }

  rep.rc = route_completion(route, half_width, rep.trajectory);
  for (const auto& [stage, v] : stage_samples) rep.latency_ms[stage] = detail::median(v);
  rep.finalize();
  return rep;
}

// ---------------------------------------------------------------------------
// Report serialization

/// Wall-clock latencies are left out unless asked for, so repeated runs
/// serialize identically.
inline nlohmann::json to_json(const EvalReport& r, bool with_latency = false) {
  using nlohmann::json;
  json events = json::array();
  for (const auto& e : r.infractions) events.push_back({{"time", e.time}, {"type", to_string(e.type)}, {"penalty", e.penalty}});
  json traj = json::array();
  for (const auto& p : r.trajectory) traj.push_back(json::array({p.x, p.y}));
  json path = json::array();
  for (const auto& p : r.first_path.waypoints) path.push_back(vec3_to_json(p));
  json roi = json::array();
  for (const auto& p : r.first_roi) roi.push_back(vec3_to_json(p));
  json j = {{"scene_id", r.scene_id},
            {"ds", r.ds},
            {"rc", r.rc},
            {"is", r.is_score},
            {"infractions", events},
            {"feature_counts",
             {{"voxel", r.feature_counts.voxel},
              {"pillar", r.feature_counts.pillar},
              {"lane_level", r.feature_counts.lane_level}}},
            {"failed", r.failed},
            {"steps", r.steps},
            {"sim_time", r.sim_time},
            {"trajectory", traj},
            {"first_path", {{"waypoints", path}, {"target_speed", r.first_path.target_speed}}},
            {"first_roi", roi}};
  if (r.failed) j["failure"] = r.failure;
  if (with_latency) j["latency_ms"] = r.latency_ms;
  return j;
}

inline constexpr const char* kEvalHeader = "scene_id,ds,rc,is,infractions,failed";

inline void write_eval_row(std::ostream& os, const EvalReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%zu,%d", r.ds, r.rc, r.is_score, r.infractions.size(), r.failed ? 1 : 0);
  os << r.scene_id << ',' << buf << '\n';
}

struct EvalAggregate {
  double ds = 0.0;
  double rc = 0.0;
  double is_score = 0.0;
  std::size_t scenes = 0;
  std::size_t failed = 0;
};

inline EvalAggregate aggregate(const std::vector<EvalReport>& reports) {
  EvalAggregate a;
  for (const auto& r : reports) {
    a.ds += r.ds;
    a.rc += r.rc;
    a.is_score += r.is_score;
    a.failed += r.failed ? 1 : 0;
  }
  a.scenes = reports.size();
  if (a.scenes) {
    const double n = static_cast<double>(a.scenes);
    a.ds /= n;
    a.rc /= n;
    a.is_score /= n;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Latency benchmark

struct BenchOptions {
  int warmup = 2;
  int reps = 15;
};

struct LatencyRow {
  std::string stage;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  Variant variant = Variant::lane_level;
};

struct BenchResult {
  std::vector<LatencyRow> rows;
  std::size_t lane_level_features = 0;  // encoded features summed over the suite
  std::size_t dense_features = 0;

  double feature_ratio() const {
    return lane_level_features ? static_cast<double>(dense_features) / static_cast<double>(lane_level_features) : 0.0;
  }
  double median(const std::string& stage, Variant v) const {
    for (const auto& r : rows) {
      if (r.stage == stage && r.variant == v) return r.median_ms;
    }
    return 0.0;
  }
};

namespace detail {

/// glibc adapts its mmap and trim thresholds to the largest block freed so
/// far, so allocation cost shifts partway through a process. Fixing them keeps
/// stage timings comparable across runs. Process-wide, applied once.
inline void pin_allocator_thresholds() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace detail

/// One sample per stage, variant and repetition: mean per-frame time across
/// the suite. The two variants alternate frame by frame so both see the same
/// machine conditions. Median and p95 are taken over repetitions.
/// Single-threaded.
inline BenchResult bench_latency(const std::vector<Scene>& scenes, const Pipeline& pipeline, const BenchOptions& opt = {}) {
  detail::pin_allocator_thresholds();
  BenchResult out;
  std::vector<PointCloud> clouds;
  for (const auto& s : scenes) clouds.push_back(transform_cloud(pipeline.render(s), s.start));
  constexpr Variant variants[] = {Variant::dense, Variant::lane_level};
  std::map<std::string, std::vector<double>> samples[2];
  const double frames = static_cast<double>(std::max<std::size_t>(1, scenes.size()));
  for (int rep = 0; rep < opt.warmup + opt.reps; ++rep) {
    std::map<std::string, double> sum[2];
    for (std::size_t k = 0; k < scenes.size(); ++k) {
      for (int vi = 0; vi < 2; ++vi) {
        FrameOptions fo;
        fo.variant = variants[vi];
        fo.jobs = 1;
        const auto frame = pipeline.run(scenes[k], scenes[k].start, clouds[k], fo);
        double total = 0;
        for (const auto& [stage, ms] : frame.timings) {
          sum[vi][stage] += ms;
          total += ms;
        }
        sum[vi]["total"] += total;
        if (rep == 0) (vi == 0 ? out.dense_features : out.lane_level_features) += frame.encoded_features;
      }
    }
    if (rep < opt.warmup) continue;
    for (int vi = 0; vi < 2; ++vi) {
      for (const auto& [stage, ms] : sum[vi]) samples[vi][stage].push_back(ms / frames);
    }
  }
  std::vector<std::string> order = stage_names();
  order.push_back("total");
  for (int vi = 0; vi < 2; ++vi) {
    for (const auto& stage : order) {
      const auto& v = samples[vi][stage];
      if (v.empty()) continue;
      out.rows.push_back({stage, detail::median(v), detail::percentile(v, 0.95), variants[vi]});
    }
  }
  return out;
}

inline constexpr const char* kLatencyHeader = "stage,median_ms,p95_ms,variant";

inline void write_latency_rows(std::ostream& os, const BenchResult& b) {
  char buf[64];
  for (const auto& r : b.rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.median_ms, r.p95_ms);
    os << r.stage << ',' << buf << ',' << to_string(r.variant) << '\n';
  }
}

}  // namespace lfp
