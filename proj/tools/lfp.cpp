// lfp: scene generation, pipeline runs, benchmarks, closed-loop evaluation,
// gradient checks and plot export.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lfp/lfp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed_scene;
  std::optional<std::uint64_t> seed_params;
  std::string out = "out";
  std::optional<int> jobs;
  std::string suite;
  // run
  std::string scene_file;
  std::string weights_file;
  bool inject_gt = false;
  // export-plot
  std::string results;
  // gradcheck test hook
  double corrupt_gradient = 0.0;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("lfp");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* lvl = std::getenv("LFP_LOG")) {
    const auto level = spdlog::level::from_str(lvl);
    // from_str maps unknown names to "off"; only accept a real match.
    if (level != spdlog::level::off || std::string(lvl) == "off") {
      spdlog::set_level(level);
    } else {
      spdlog::warn("LFP_LOG='{}' is not a log level; using info", lvl);
    }
  }
}

lfp::RunConfig load_config(const Options& o) {
  lfp::RunConfig cfg;
  if (!o.config.empty()) cfg = lfp::run_config_from_json(lfp::parse_json_text(lfp::read_file(o.config)));
  if (o.seed_scene) cfg.seed_scene = *o.seed_scene;
  if (o.seed_params) cfg.seed_params = *o.seed_params;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (!o.suite.empty()) {
    cfg.suite = o.suite;
    cfg.scenes.clear();
  }
  if (o.inject_gt) cfg.closed_loop.inject_ground_truth = true;
  if (auto d = lfp::validate(cfg); !d.empty()) throw lfp::ValidationError(std::move(d));
  spdlog::info("scene seed {}, parameter seed {}", cfg.seed_scene, cfg.seed_params);
  return cfg;
}

lfp::WeightBlocks load_weights(const Options& o) {
  if (o.weights_file.empty()) return {};
  auto blocks = lfp::decode_weight_blocks(lfp::read_file(o.weights_file));
  spdlog::info("loaded {} weight blocks from {}", blocks.size(), o.weights_file);
  return blocks;
}

std::string scene_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03zu", i);
  return buf;
}

void write_manifest(const fs::path& out, const std::string& command, const lfp::RunConfig& cfg, json extra = json::object()) {
  json m = {{"command", command},
            {"version", kVersion},
            {"seeds", {{"scene", cfg.seed_scene}, {"params", cfg.seed_params}}},
            {"config", lfp::to_json(cfg)}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  lfp::write_file_atomic(out / ("manifest_" + command + ".json"), m.dump(2) + "\n");
}

std::vector<lfp::Scene> build_scenes(const lfp::RunConfig& cfg) {
  std::vector<lfp::Scene> scenes;
  const auto specs = cfg.suite_specs();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    try {
      scenes.push_back(lfp::generate_scene(specs[i], cfg.synth()));
    } catch (const lfp::ValidationError& e) {
      std::vector<std::string> d;
      for (const auto& m : e.diagnostics) d.push_back("scenes[" + std::to_string(i) + "]: " + m);
      throw lfp::ValidationError(std::move(d));
    }
  }
  return scenes;
}

// ---------------------------------------------------------------------------

int cmd_gen_scenes(const Options& o) {
  const auto cfg = load_config(o);
  const fs::path out = o.out;
  const auto scenes = build_scenes(cfg);
  json files = json::array();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto id = scene_id(i);
    const fs::path scene_path = out / "scenes" / (id + ".json");
    const fs::path gt_path = out / "scenes" / (id + ".gt.json");
    lfp::write_file_atomic(scene_path, lfp::to_json(scenes[i]).dump(2) + "\n");
    lfp::write_file_atomic(gt_path, lfp::serialize(scenes[i].ground_truth) + "\n");
    files.push_back({{"id", id}, {"scene", fs::relative(scene_path, out).string()}, {"ground_truth", fs::relative(gt_path, out).string()},
                     {"seed", scenes[i].spec.seed}});
    spdlog::debug("wrote {}", scene_path.string());
  }
  write_manifest(out, "gen-scenes", cfg, {{"scenes", files}});
  spdlog::info("wrote {} scenes to {}", scenes.size(), (out / "scenes").string());
  return 0;
}

json breakdown_json(const lfp::LossBreakdown& b) {
  return {{"roi", b.roi}, {"edg", b.edg}, {"int", b.int_}, {"dir", b.dir}, {"occ", b.occ},
          {"plan", b.plan}, {"spd", b.spd}, {"sig", b.sig}, {"total", b.total}};
}

int cmd_run(const Options& o) {
  const auto cfg = load_config(o);
  const fs::path out = o.out;
  std::vector<std::pair<std::string, lfp::Scene>> scenes;
  if (!o.scene_file.empty()) {
    scenes.emplace_back(fs::path(o.scene_file).stem().string(), lfp::scene_from_json(lfp::parse_json_text(lfp::read_file(o.scene_file))));
  } else {
    auto built = build_scenes(cfg);
    for (std::size_t i = 0; i < built.size(); ++i) scenes.emplace_back(scene_id(i), std::move(built[i]));
  }
  const lfp::Pipeline pipeline(cfg.model, cfg.seed_params, load_weights(o));
  lfp::FrameOptions fo;
  fo.jobs = cfg.jobs;
  fo.inject_ground_truth = cfg.closed_loop.inject_ground_truth;
  for (const auto& [id, scene] : scenes) {
    if (static_cast<int>(scene.lanes.size()) > cfg.model.n_d) {
      throw lfp::StructuralError(id + ": scene has " + std::to_string(scene.lanes.size()) + " lanes but n_d = " + std::to_string(cfg.model.n_d));
    }
    const auto cloud = lfp::transform_cloud(pipeline.render(scene), scene.start);
    const auto frame = pipeline.run(scene, scene.start, cloud, fo);
    const auto targets = lfp::frame_targets(scene, scene.start, cfg.model.n_p);
    const auto losses = lfp::compute_losses(frame.predictions, frame.prior.roi, targets, cfg.loss, cfg.weights);
    json path = json::array();
    for (const auto& w : frame.path.waypoints) path.push_back(lfp::vec3_to_json(w));
    json roi = json::array();
    for (const auto& p : frame.prior.roi.points) roi.push_back(lfp::vec3_to_json(p));
    const json dump = {{"scene_id", id},
                       {"inject_ground_truth", fo.inject_ground_truth},
                       {"predictions", lfp::to_json(frame.predictions)},
                       {"lanes", lfp::to_json(frame.lanes)},
                       {"lane_roi", roi},
                       {"lane_weights", frame.prior.weights.weights},
                       {"path", {{"waypoints", path}, {"target_speed", frame.path.target_speed}}},
                       {"losses", breakdown_json(losses)},
                       {"pillar_count", frame.pillar_count},
                       {"empty_lane_samples", frame.empty_lane_samples},
                       {"attention_max_row_error", frame.attention.max_row_error}};
    lfp::write_file_atomic(out / "run" / (id + ".json"), dump.dump(2) + "\n");
    std::ostringstream csv;
    csv << "loss_name,value\n";
    for (const auto& [k, v] : dump.at("losses").items()) csv << k << ',' << v.get<double>() << '\n';
    lfp::write_file_atomic(out / "run" / (id + ".losses.csv"), csv.str());
    spdlog::info("{}: total loss {:.6f}, {} waypoints", id, losses.total, frame.path.waypoints.size());
  }
  write_manifest(out, "run", cfg);
  return 0;
}

int cmd_bench(const Options& o) {
  const auto cfg = load_config(o);
  const fs::path out = o.out;
  const auto scenes = build_scenes(cfg);
  const lfp::Pipeline pipeline(cfg.model, cfg.seed_params, load_weights(o));

  std::ostringstream counts;
  counts << lfp::kFeatureCountHeader << '\n';
  std::vector<lfp::FeatureCounts> rows(scenes.size());
  lfp::parallel_for(scenes.size(), cfg.jobs, [&](std::size_t i) {
    const auto cloud = lfp::transform_cloud(pipeline.render(scenes[i]), scenes[i].start);
    const auto frame = pipeline.run(scenes[i], scenes[i].start, cloud);
    rows[i] = lfp::feature_count_report(cloud, frame.prior.roi, cfg.model.voxel_grid, cfg.model.pillar_grid);
  });
  for (std::size_t i = 0; i < scenes.size(); ++i) lfp::write_feature_count_row(counts, scene_id(i), rows[i]);
  lfp::write_file_atomic(out / "feature_counts.csv", counts.str());

  const auto bench = lfp::bench_latency(scenes, pipeline, cfg.bench);
  std::ostringstream lat;
  lat << lfp::kLatencyHeader << '\n';
  lfp::write_latency_rows(lat, bench);
  lfp::write_file_atomic(out / "latency.csv", lat.str());
  spdlog::info("dense encoding processes {:.2f}x the features of lane-level encoding", bench.feature_ratio());
  spdlog::info("total per frame: dense {:.2f} ms, lane-level {:.2f} ms", bench.median("total", lfp::Variant::dense),
               bench.median("total", lfp::Variant::lane_level));
  write_manifest(out, "bench", cfg,
                 {{"encoded_features", {{"lane_level", bench.lane_level_features}, {"dense", bench.dense_features}}},
                  {"feature_ratio", bench.feature_ratio()}});
  return 0;
}

int cmd_eval(const Options& o) {
  const auto cfg = load_config(o);
  const fs::path out = o.out;
  const auto scenes = build_scenes(cfg);
  const lfp::Pipeline pipeline(cfg.model, cfg.seed_params, load_weights(o));
  std::vector<lfp::EvalReport> reports(scenes.size());
  // Parallel across scenes; each episode itself runs on one thread.
  lfp::parallel_for(scenes.size(), cfg.jobs, [&](std::size_t i) {
    reports[i] = lfp::run_closed_loop(scenes[i], pipeline, cfg.closed_loop, scene_id(i));
  });
  std::ostringstream csv, lat;
  csv << lfp::kEvalHeader << '\n';
  lat << "scene_id,stage,median_ms\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    lfp::write_file_atomic(out / "eval" / (r.scene_id + ".json"), lfp::to_json(r).dump(2) + "\n");
    lfp::write_file_atomic(out / "eval" / (r.scene_id + ".scene.json"), lfp::to_json(scenes[i]).dump(2) + "\n");
    lfp::write_eval_row(csv, r);
    for (const auto& [stage, ms] : r.latency_ms) lat << r.scene_id << ',' << stage << ',' << ms << '\n';
    if (r.failed) spdlog::error("{}: pipeline failure: {}", r.scene_id, r.failure);
    spdlog::info("{}: DS {:.2f} RC {:.4f} IS {:.4f} ({} infractions)", r.scene_id, r.ds, r.rc, r.is_score, r.infractions.size());
  }
  const auto agg = lfp::aggregate(reports);
  char buf[96];
  std::snprintf(buf, sizeof buf, "mean,%.6f,%.6f,%.6f,,%zu\n", agg.ds, agg.rc, agg.is_score, agg.failed);
  csv << buf;
  lfp::write_file_atomic(out / "eval_summary.csv", csv.str());
  lfp::write_file_atomic(out / "eval_latency.csv", lat.str());
  const json a = {{"ds", agg.ds}, {"rc", agg.rc}, {"is", agg.is_score}, {"scenes", agg.scenes}, {"failed", agg.failed}};
  lfp::write_file_atomic(out / "eval_aggregate.json", a.dump(2) + "\n");
  write_manifest(out, "eval", cfg);
  spdlog::info("aggregate over {} scenes: DS {:.2f} RC {:.4f} IS {:.4f}", agg.scenes, agg.ds, agg.rc, agg.is_score);
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const auto cfg = load_config(o);
  const fs::path out = o.out;
  lfp::GradCheckOptions opt;
  opt.points = cfg.gradcheck_points;
  opt.step = cfg.gradcheck_step;
  opt.seed = cfg.seed_params;
  opt.loss = cfg.loss;
  opt.corrupt = o.corrupt_gradient;
  if (opt.corrupt != 0.0) spdlog::warn("analytic gradients deliberately scaled by {}", 1.0 + opt.corrupt);
  constexpr double kTolerance = 1e-4;
  std::ostringstream csv;
  csv << lfp::kGradCheckHeader << '\n';
  bool ok = true;
  for (const auto& name : lfp::gradcheck_loss_names()) {
    const auto r = lfp::grad_check(name, opt);
    lfp::write_gradcheck_row(csv, r);
    const bool pass = r.max_rel_err < kTolerance;
    ok = ok && pass;
    spdlog::info("{:5s} max rel err {:.3e} over {} points ({} resampled) {}", name, r.max_rel_err, r.points, r.resampled,
                 pass ? "ok" : "FAIL");
  }
  lfp::write_file_atomic(out / "gradcheck.csv", csv.str());
  write_manifest(out, "gradcheck", cfg);
  return ok ? 0 : 1;
}

/// Minimal CSV reader for our own outputs (no quoting).
std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream in(lfp::read_file(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

int cmd_export_plot(const Options& o) {
  const fs::path results = o.results.empty() ? fs::path(o.out) : fs::path(o.results);
  const fs::path plots = results / "plots";
  const fs::path counts = results / "feature_counts.csv";
  const fs::path latency = results / "latency.csv";
  const fs::path eval = results / "eval";
  if (!fs::exists(counts) && !fs::exists(latency) && !fs::is_directory(eval)) {
    spdlog::error("no results in {}: expected feature_counts.csv, latency.csv or eval/ (run bench or eval first)", results.string());
    return 2;
  }
  int written = 0;
  if (fs::exists(counts)) {
    const auto rows = read_csv(counts);
    if (rows.empty() || rows[0].size() != 6) throw lfp::ParseError("unexpected feature-count header", counts.string());
    std::vector<lfp::BarGroup> groups;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      groups.push_back({rows[i][0], {std::stod(rows[i][1]), std::stod(rows[i][2]), std::stod(rows[i][3])}});
    }
    lfp::write_file_atomic(plots / "feature_counts.svg",
                           lfp::svg_bar_chart("Encoded features per scene", {"voxel", "pillar", "lane_level"}, groups));
    ++written;
  }
  if (fs::exists(latency)) {
    const auto rows = read_csv(latency);
    std::vector<std::string> stages;
    std::map<std::string, std::map<std::string, double>> med;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() != 4) throw lfp::ParseError("malformed latency row", latency.string() + ":" + std::to_string(i + 1));
      if (std::find(stages.begin(), stages.end(), rows[i][0]) == stages.end()) stages.push_back(rows[i][0]);
      med[rows[i][0]][rows[i][3]] = std::stod(rows[i][1]);
    }
    std::vector<lfp::BarGroup> groups;
    for (const auto& s : stages) groups.push_back({s, {med[s]["dense"], med[s]["lane_level"]}});
    lfp::write_file_atomic(plots / "latency.svg", lfp::svg_bar_chart("Median stage latency (ms)", {"dense", "lane_level"}, groups));
    ++written;
  }
  if (fs::is_directory(eval)) {
    std::vector<fs::path> reports;
    for (const auto& e : fs::directory_iterator(eval)) {
      const auto name = e.path().filename().string();
      if (name.ends_with(".json") && !name.ends_with(".scene.json")) reports.push_back(e.path());
    }
    std::sort(reports.begin(), reports.end());
    for (const auto& rp : reports) {
      const auto id = rp.stem().string();
      const fs::path sp = eval / (id + ".scene.json");
      if (!fs::exists(sp)) {
        spdlog::error("missing {} for report {}", sp.string(), rp.string());
        return 2;
      }
      const auto scene = lfp::scene_from_json(lfp::parse_json_text(lfp::read_file(sp)));
      const auto j = lfp::parse_json_text(lfp::read_file(rp));
      lfp::EvalReport r;
      r.scene_id = id;
      for (const auto& p : j.at("trajectory")) r.trajectory.push_back({p.at(0).get<double>(), p.at(1).get<double>(), 0.0});
      for (const auto& p : j.at("first_path").at("waypoints")) r.first_path.waypoints.push_back(lfp::detail::as_vec3(p, rp.string()));
      lfp::write_file_atomic(plots / ("scene_" + id + ".svg"), lfp::svg_scene(scene, r));
      ++written;
    }
  }
  spdlog::info("wrote {} plots to {}", written, plots.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Lane-level camera/LiDAR fusion planner: scenes, runs, benchmarks and evaluation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed-scene", o.seed_scene, "scene seed (overrides config)");
    sub->add_option("--seed-params", o.seed_params, "parameter seed (overrides config)");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--suite", o.suite, "scene suite: reference, trivial or blocked");
  };

  auto* gen = app.add_subcommand("gen-scenes", "generate suite scenes and ground truth");
  common(gen);
  auto* run = app.add_subcommand("run", "run the pipeline once per scene and dump predictions and losses");
  common(run);
  run->add_option("--scene", o.scene_file, "scene JSON written by gen-scenes")->check(CLI::ExistingFile);
  run->add_option("--weights", o.weights_file, "LFPW weight file")->check(CLI::ExistingFile);
  run->add_flag("--inject-gt", o.inject_gt, "replace predictions with ground truth");
  auto* bench = app.add_subcommand("bench", "feature counts and per-stage latency");
  common(bench);
  bench->add_option("--weights", o.weights_file, "LFPW weight file")->check(CLI::ExistingFile);
  auto* eval = app.add_subcommand("eval", "closed-loop evaluation over the suite");
  common(eval);
  eval->add_option("--weights", o.weights_file, "LFPW weight file")->check(CLI::ExistingFile);
  eval->add_flag("--inject-gt", o.inject_gt, "replace predictions with ground truth");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every loss gradient");
  common(grad);
  grad->add_option("--corrupt-gradient", o.corrupt_gradient)->group("");  // negative-control hook
  auto* plot = app.add_subcommand("export-plot", "SVG charts and scene renderings from results");
  common(plot);
  plot->add_option("--results", o.results, "results directory (defaults to --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen_scenes(o);
    if (*run) return cmd_run(o);
    if (*bench) return cmd_bench(o);
    if (*eval) return cmd_eval(o);
    if (*grad) return cmd_gradcheck(o);
    if (*plot) return cmd_export_plot(o);
  } catch (const lfp::ValidationError& e) {
    for (const auto& d : e.diagnostics) spdlog::error("invalid configuration: {}", d);
    return 2;
  } catch (const lfp::ParseError& e) {
    spdlog::error("parse error: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
