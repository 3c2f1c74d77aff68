#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lfp/sim.hpp"

using namespace lfp;

namespace {

const Pipeline& shared_pipeline() {
  static const Pipeline p(ModelConfig{}, 7);
  return p;
}

LaneGeometry straight_route(double length) {
  LaneGeometry g;
  g.length = length;
  return g;
}

}  // namespace

TEST(Kinematics, StraightAdvanceAndRest) {
  const ControllerConfig cfg;
  const EgoState s{0, 0, 0, 1.0};
  const auto n = step_ego(s, 0.0, 0.0, cfg);
  EXPECT_DOUBLE_EQ(n.x, 0.05);
  EXPECT_EQ(n.y, 0.0);
  EXPECT_EQ(n.heading, 0.0);
  const EgoState rest{3, 4, 0.5, 0.0};
  EXPECT_EQ(step_ego(rest, 0.3, 0.0, cfg), rest);
  // Braking never reverses.
  EXPECT_EQ(step_ego({0, 0, 0, 0.1}, 0, -3.0, cfg).speed, 0.0);
  EXPECT_THROW(step_ego(s, 0.8, 0.0, cfg), std::invalid_argument);
}

TEST(Kinematics, ConstantSteerTracesBicycleCircle) {
  ControllerConfig cfg;
  cfg.dt = 0.01;
  const double steer = 0.3;
  const double radius = cfg.wheelbase / std::tan(steer);
  EgoState s{0, 0, 0, 5.0};
  std::vector<std::pair<double, double>> pts;
  const int steps = static_cast<int>(std::round(2 * std::numbers::pi * radius / (s.speed * cfg.dt)));
  for (int k = 0; k < steps; ++k) {
    s = step_ego(s, steer, 0.0, cfg);
    pts.emplace_back(s.x, s.y);
  }
  double cx = 0, cy = 0;
  for (auto [x, y] : pts) {
    cx += x;
    cy += y;
  }
  cx /= pts.size();
  cy /= pts.size();
  double r = 0;
  for (auto [x, y] : pts) r += std::hypot(x - cx, y - cy);
  r /= pts.size();
  EXPECT_NEAR(r, radius, 0.01 * radius);
  EXPECT_NEAR(cx, 0.0, 0.01 * radius);
  EXPECT_NEAR(cy, radius, 0.01 * radius);
}

TEST(PurePursuit, ClosedFormControls) {
  const ControllerConfig cfg;
  const EgoState s{0, 0, 0, 4.0};
  const auto ahead = follow_path(s, {{{10, 0, 0}}, 4.0}, cfg);
  EXPECT_EQ(ahead.steer, 0.0);
  EXPECT_EQ(ahead.accel, 0.0);
  const double a = std::numbers::pi / 6;
  const auto left = follow_path(s, {{{5 * std::cos(a), 5 * std::sin(a), 0}}, 6.0}, cfg);
  EXPECT_NEAR(left.steer, std::atan(2 * cfg.wheelbase * std::sin(a) / cfg.lookahead), 1e-12);
  EXPECT_EQ(left.accel, 2.0);
  const auto hard = follow_path(s, {{{0, 5, 0}}, 100.0}, cfg);
  EXPECT_EQ(hard.steer, cfg.max_steer);
  EXPECT_EQ(hard.accel, cfg.max_accel);
  const auto none = follow_path(s, {}, cfg);
  EXPECT_EQ(none.steer, 0.0);
  EXPECT_EQ(none.accel, 0.0);
}

TEST(PurePursuit, AimsAtFirstPointBeyondLookahead) {
  const ControllerConfig cfg;
  const EgoState s{0, 0, 0, 0};
  // Nearest is index 0; index 1 is inside the lookahead; index 2 sits to the right.
  const PlannedPath p{{{0.5, 0, 0}, {2, 0, 0}, {4, -4, 0}, {20, 0, 0}}, 1.0};
  EXPECT_LT(follow_path(s, p, cfg).steer, 0.0);
}

TEST(Scoring, RouteCompletion) {
  const auto route = straight_route(50);
  EXPECT_EQ(route_completion(route, 1.75, {{0, 0, 0}, {50, 0, 0}}), 1.0);
  EXPECT_EQ(route_completion(route, 1.75, {{0, 0, 0}}), 0.0);
  EXPECT_EQ(route_completion(route, 1.75, {{30, 5, 0}}), 0.0);  // off the lane
  EXPECT_NEAR(route_completion(route, 1.75, {{0, 0, 0}, {12, 0.5, 0}, {25, 0, 0}, {20, 0, 0}}), 0.5, 0.01);
  EXPECT_EQ(route_completion(LaneGeometry{}, 1.0, {{0, 0, 0}}), 0.0);
}

TEST(Scoring, InfractionScoreIsOrderFreeProduct) {
  const InfractionPenalties pen;
  InfractionLog log{{1.0, InfractionType::collision_vehicle, pen.collision_vehicle},
                    {2.0, InfractionType::red_light, pen.red_light}};
  EXPECT_NEAR(infraction_score(log), 0.42, 1e-15);
  std::swap(log[0], log[1]);
  EXPECT_NEAR(infraction_score(log), 0.42, 1e-15);
  EXPECT_EQ(infraction_score({}), 1.0);
  EXPECT_EQ(pen.factor(InfractionType::collision_static), 0.65);
  EXPECT_EQ(pen.factor(InfractionType::route_deviation), 1.0);
  EvalReport r;
  r.rc = 0.8;
  r.infractions = log;
  r.finalize();
  EXPECT_NEAR(r.ds, 100 * 0.8 * 0.42, 1e-12);
}

TEST(Scoring, Helpers) {
  EXPECT_EQ(detail::median({3, 1, 2}), 2.0);
  EXPECT_EQ(detail::median({4, 1, 2, 3}), 2.5);
  EXPECT_EQ(detail::median({}), 0.0);
  std::vector<double> v;
  for (int k = 1; k <= 20; ++k) v.push_back(k);
  EXPECT_EQ(detail::percentile(v, 0.95), 19.0);
  EXPECT_EQ(detail::percentile(v, 1.0), 20.0);
  EXPECT_EQ(detail::percentile(v, 0.0), 1.0);
  std::vector<EvalReport> reps(2);
  reps[0].ds = 100;
  reps[0].rc = 1;
  reps[1].ds = 50;
  reps[1].rc = 0.5;
  reps[1].failed = true;
  const auto a = aggregate(reps);
  EXPECT_EQ(a.ds, 75.0);
  EXPECT_EQ(a.rc, 0.75);
  EXPECT_EQ(a.failed, 1u);
}

TEST(ClosedLoop, StraightRoadWithInjectedGroundTruth) {
  const auto scene = generate_scene(trivial_suite(42)[0]);
  ClosedLoopOptions opt;
  opt.inject_ground_truth = true;
  const auto r = run_closed_loop(scene, shared_pipeline(), opt, "t0");
  EXPECT_FALSE(r.failed) << r.failure;
  EXPECT_GE(r.rc, 0.99);
  EXPECT_EQ(r.is_score, 1.0);
  EXPECT_GE(r.ds, 99.0);
  EXPECT_EQ(r.ds, 100.0 * r.rc * r.is_score);
  EXPECT_FALSE(r.first_path.empty());
}

TEST(ClosedLoop, RoadblockIsPenalized) {
  const auto scene = generate_scene(blocked_suite(42)[0]);
  ClosedLoopOptions opt;
  opt.inject_ground_truth = true;
  const auto r = run_closed_loop(scene, shared_pipeline(), opt, "b0");
  EXPECT_LT(r.is_score, 1.0);
  ASSERT_FALSE(r.infractions.empty());
  EXPECT_EQ(r.infractions[0].type, InfractionType::collision_static);
}

TEST(ClosedLoop, SingleTickMakesNoProgress) {
  const auto scene = generate_scene(trivial_suite(42)[1]);
  ClosedLoopOptions opt;
  opt.horizon = 0.05;
  opt.inject_ground_truth = true;
  const auto r = run_closed_loop(scene, shared_pipeline(), opt);
  EXPECT_EQ(r.steps, 1);
  EXPECT_LT(r.rc, 0.01);
  EXPECT_TRUE(r.infractions.empty());
  EXPECT_EQ(r.ds, 100.0 * r.rc * r.is_score);
}

TEST(ClosedLoop, RepeatedRunsAreIdentical) {
  SceneSpec s;
  s.lane_count = 2;
  s.agent_count = 2;
  s.traffic_signal = SignalState::red;
  const auto scene = generate_scene(s);
  ClosedLoopOptions opt;
  opt.horizon = 1.0;
  const auto a = run_closed_loop(scene, shared_pipeline(), opt, "x");
  const auto b = run_closed_loop(scene, shared_pipeline(), opt, "x");
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(a.trajectory, b.trajectory);
  opt.horizon = 0.0;
  EXPECT_THROW(run_closed_loop(scene, shared_pipeline(), opt), std::invalid_argument);
}

TEST(Bench, FeatureReductionAndRows) {
  std::vector<Scene> scenes;
  for (const auto& s : reference_suite(42)) scenes.push_back(generate_scene(s));
  scenes.resize(3);
  const auto b = bench_latency(scenes, shared_pipeline(), {1, 3});
  EXPECT_EQ(b.lane_level_features, 3u * 120u);
  EXPECT_GE(b.feature_ratio(), 3.0);
  EXPECT_GT(b.median("total", Variant::dense), 0.0);
  EXPECT_GT(b.median("total", Variant::lane_level), 0.0);
  EXPECT_EQ(b.median("lane_sample", Variant::dense), 0.0);  // stage absent in the dense variant
  for (const auto& row : b.rows) EXPECT_LE(row.median_ms, row.p95_ms);
}
