#pragma once

// Run configuration: one JSON document covering model shape, seeds, grids,
// losses, controller and scene suite. Missing keys keep their defaults;
// unknown keys are rejected so typos do not pass silently.

#include <nlohmann/json.hpp>

#include <set>
#include <string>
#include <vector>

#include "lfp/gradcheck.hpp"
#include "lfp/sim.hpp"

namespace lfp {

struct RunConfig {
  ModelConfig model;
  std::uint64_t seed_scene = 42;
  std::uint64_t seed_params = 7;
  LossConfig loss;
  LossWeights weights;
  ClosedLoopOptions closed_loop;
  std::string suite = "reference";
  std::vector<SceneSpec> scenes;  // explicit list; overrides `suite` when non-empty
  BenchOptions bench;
  int gradcheck_points = 100;
  double gradcheck_step = 1e-5;
  int jobs = 1;

  /// Scene specs to run, from the explicit list or the named suite.
  std::vector<SceneSpec> suite_specs() const {
    if (!scenes.empty()) return scenes;
    auto s = suite_by_name(suite, seed_scene);
    if (!s) throw ValidationError({"unknown suite '" + suite + "' (expected reference, trivial or blocked)"});
    return *s;
  }

  SynthConfig synth() const {
    SynthConfig s;
    s.n_d = model.n_d;
    s.n_p = model.n_p;
    return s;
  }
};

inline std::vector<std::string> validate(const RunConfig& c) {
  std::vector<std::string> out;
  for (auto& d : validate(c.model)) out.push_back(d);
  for (auto& d : validate(c.loss)) out.push_back("loss: " + d);
  for (auto& d : validate(c.weights)) out.push_back("loss: " + d);
  for (auto& d : validate(c.closed_loop.controller)) out.push_back(d);
  for (auto& d : validate(c.closed_loop.penalties)) out.push_back(d);
  if (!(c.closed_loop.horizon > 0)) out.push_back("horizon must be > 0");
  if (c.jobs < 1) out.push_back("jobs must be >= 1");
  if (c.bench.reps < 1 || c.bench.warmup < 0) out.push_back("bench: reps must be >= 1 and warmup >= 0");
  if (c.gradcheck_points < 1 || !(c.gradcheck_step > 0)) out.push_back("gradcheck: points >= 1 and step > 0 required");
  for (std::size_t i = 0; i < c.scenes.size(); ++i) {
    for (auto& d : validate(c.scenes[i])) out.push_back("scenes[" + std::to_string(i) + "]: " + d);
  }
  return out;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& path) {
  if (!j.is_object()) throw ParseError("expected an object", path);
  std::set<std::string> k(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!k.contains(key)) throw ParseError("unknown key '" + key + "'", path);
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  const std::string where = path + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ParseError("expected a boolean", where);
    out = v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ParseError("expected a string", where);
    out = v.get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ParseError("expected an integer", where);
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) {
        out = v.get<T>();
      } else {
        throw ParseError("expected a non-negative integer", where);
      }
    } else {
      out = v.get<T>();
    }
  } else {
    if (!v.is_number()) throw ParseError("expected a number", where);
    out = v.get<T>();
  }
}

inline void read_grid(const nlohmann::json& j, GridSpec& g, const std::string& path) {
  reject_unknown(j, {"resolution", "lo", "hi"}, path);
  if (j.contains("resolution")) g.resolution = as_vec3(j.at("resolution"), path + ".resolution");
  if (j.contains("lo")) g.lo = as_vec3(j.at("lo"), path + ".lo");
  if (j.contains("hi")) g.hi = as_vec3(j.at("hi"), path + ".hi");
}

inline nlohmann::json grid_json(const GridSpec& g) {
  return {{"resolution", vec3_to_json(g.resolution)}, {"lo", vec3_to_json(g.lo)}, {"hi", vec3_to_json(g.hi)}};
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::read;
  const std::string r = "$";
  detail::reject_unknown(j,
                         {"n_d", "n_p", "e_dim", "k_layers", "heads", "c_channels", "seeds", "grid", "r_max", "lidar",
                          "view", "loss", "controller", "penalties", "horizon", "inject_ground_truth", "suite", "scenes",
                          "bench", "gradcheck", "jobs"},
                         r);
  RunConfig c;
  read(j, "n_d", c.model.n_d, r);
  read(j, "n_p", c.model.n_p, r);
  read(j, "e_dim", c.model.block.embed, r);
  read(j, "k_layers", c.model.block.layers, r);
  read(j, "heads", c.model.block.heads, r);
  read(j, "c_channels", c.model.channels, r);
  c.model.view.channels = c.model.channels;
  read(j, "r_max", c.model.r_max, r);
  read(j, "horizon", c.closed_loop.horizon, r);
  read(j, "inject_ground_truth", c.closed_loop.inject_ground_truth, r);
  read(j, "jobs", c.jobs, r);
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    detail::reject_unknown(s, {"scene", "params"}, "$.seeds");
    read(s, "scene", c.seed_scene, "$.seeds");
    read(s, "params", c.seed_params, "$.seeds");
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    detail::reject_unknown(g, {"voxel", "pillar"}, "$.grid");
    if (g.contains("voxel")) detail::read_grid(g.at("voxel"), c.model.voxel_grid, "$.grid.voxel");
    if (g.contains("pillar")) detail::read_grid(g.at("pillar"), c.model.pillar_grid, "$.grid.pillar");
  }
  if (j.contains("lidar")) {
    const auto& l = j.at("lidar");
    detail::reject_unknown(l, {"density", "noise"}, "$.lidar");
    read(l, "density", c.model.lidar_density, "$.lidar");
    read(l, "noise", c.model.lidar_noise, "$.lidar");
  }
  if (j.contains("view")) {
    const auto& v = j.at("view");
    detail::reject_unknown(v, {"views", "height", "width", "fov", "max_range", "supersample"}, "$.view");
    read(v, "views", c.model.view.views, "$.view");
    read(v, "height", c.model.view.height, "$.view");
    read(v, "width", c.model.view.width, "$.view");
    read(v, "fov", c.model.view.fov, "$.view");
    read(v, "max_range", c.model.view.max_range, "$.view");
    read(v, "supersample", c.model.view.supersample, "$.view");
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    const std::string p = "$.loss";
    detail::reject_unknown(l, {"rho", "focal_gamma", "focal_alpha", "d_p2t_floor", "weights"}, p);
    read(l, "rho", c.loss.rho, p);
    read(l, "focal_gamma", c.loss.focal_gamma, p);
    read(l, "focal_alpha", c.loss.focal_alpha, p);
    read(l, "d_p2t_floor", c.loss.d_p2t_floor, p);
    if (l.contains("weights")) {
      const auto& w = l.at("weights");
      const std::string q = p + ".weights";
      detail::reject_unknown(w, {"gamma", "delta", "epsilon", "varepsilon", "zeta", "eta", "theta", "iota"}, q);
      read(w, "gamma", c.weights.gamma, q);
      read(w, "delta", c.weights.delta, q);
      read(w, "epsilon", c.weights.epsilon, q);
      read(w, "varepsilon", c.weights.varepsilon, q);
      read(w, "zeta", c.weights.zeta, q);
      read(w, "eta", c.weights.eta, q);
      read(w, "theta", c.weights.theta, q);
      read(w, "iota", c.weights.iota, q);
    }
  }
  if (j.contains("controller")) {
    const auto& k = j.at("controller");
    const std::string p = "$.controller";
    auto& cc = c.closed_loop.controller;
    detail::reject_unknown(k, {"lookahead", "wheelbase", "speed_gain", "dt", "max_steer", "max_accel"}, p);
    read(k, "lookahead", cc.lookahead, p);
    read(k, "wheelbase", cc.wheelbase, p);
    read(k, "speed_gain", cc.speed_gain, p);
    read(k, "dt", cc.dt, p);
    read(k, "max_steer", cc.max_steer, p);
    read(k, "max_accel", cc.max_accel, p);
  }
  if (j.contains("penalties")) {
    const auto& k = j.at("penalties");
    const std::string p = "$.penalties";
    auto& pe = c.closed_loop.penalties;
    detail::reject_unknown(k, {"collision_vehicle", "collision_static", "red_light", "route_deviation"}, p);
    read(k, "collision_vehicle", pe.collision_vehicle, p);
    read(k, "collision_static", pe.collision_static, p);
    read(k, "red_light", pe.red_light, p);
    read(k, "route_deviation", pe.route_deviation, p);
  }
  read(j, "suite", c.suite, r);
  if (j.contains("scenes")) {
    const auto& s = j.at("scenes");
    if (!s.is_array()) throw ParseError("expected an array", "$.scenes");
    for (std::size_t i = 0; i < s.size(); ++i) c.scenes.push_back(scene_spec_from_json(s[i], "$.scenes[" + std::to_string(i) + "]"));
  }
  if (j.contains("bench")) {
    const auto& b = j.at("bench");
    detail::reject_unknown(b, {"warmup", "reps"}, "$.bench");
    read(b, "warmup", c.bench.warmup, "$.bench");
    read(b, "reps", c.bench.reps, "$.bench");
  }
  if (j.contains("gradcheck")) {
    const auto& g = j.at("gradcheck");
    detail::reject_unknown(g, {"points", "step"}, "$.gradcheck");
    read(g, "points", c.gradcheck_points, "$.gradcheck");
    read(g, "step", c.gradcheck_step, "$.gradcheck");
  }
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  const auto& m = c.model;
  const auto& cc = c.closed_loop.controller;
  const auto& pe = c.closed_loop.penalties;
  const auto& w = c.weights;
  json scenes = json::array();
  for (const auto& s : c.scenes) scenes.push_back(to_json(s));
  return {{"n_d", m.n_d},
          {"n_p", m.n_p},
          {"e_dim", m.block.embed},
          {"k_layers", m.block.layers},
          {"heads", m.block.heads},
          {"c_channels", m.channels},
          {"seeds", {{"scene", c.seed_scene}, {"params", c.seed_params}}},
          {"grid", {{"voxel", detail::grid_json(m.voxel_grid)}, {"pillar", detail::grid_json(m.pillar_grid)}}},
          {"r_max", m.r_max},
          {"lidar", {{"density", m.lidar_density}, {"noise", m.lidar_noise}}},
          {"view",
           {{"views", m.view.views},
            {"height", m.view.height},
            {"width", m.view.width},
            {"fov", m.view.fov},
            {"max_range", m.view.max_range},
            {"supersample", m.view.supersample}}},
          {"loss",
           {{"rho", c.loss.rho},
            {"focal_gamma", c.loss.focal_gamma},
            {"focal_alpha", c.loss.focal_alpha},
            {"d_p2t_floor", c.loss.d_p2t_floor},
            {"weights",
             {{"gamma", w.gamma},
              {"delta", w.delta},
              {"epsilon", w.epsilon},
              {"varepsilon", w.varepsilon},
              {"zeta", w.zeta},
              {"eta", w.eta},
              {"theta", w.theta},
              {"iota", w.iota}}}}},
          {"controller",
           {{"lookahead", cc.lookahead},
            {"wheelbase", cc.wheelbase},
            {"speed_gain", cc.speed_gain},
            {"dt", cc.dt},
            {"max_steer", cc.max_steer},
            {"max_accel", cc.max_accel}}},
          {"penalties",
           {{"collision_vehicle", pe.collision_vehicle},
            {"collision_static", pe.collision_static},
            {"red_light", pe.red_light},
            {"route_deviation", pe.route_deviation}}},
          {"horizon", c.closed_loop.horizon},
          {"inject_ground_truth", c.closed_loop.inject_ground_truth},
          {"suite", c.suite},
          {"scenes", scenes},
          {"bench", {{"warmup", c.bench.warmup}, {"reps", c.bench.reps}}},
          {"gradcheck", {{"points", c.gradcheck_points}, {"step", c.gradcheck_step}}},
          {"jobs", c.jobs}};
}

}  // namespace lfp
