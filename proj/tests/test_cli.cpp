#include <gtest/gtest.h>
#include <sys/wait.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lfp/lfp.hpp"

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

struct RunResult {
  int code = -1;
  std::string log;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lfp_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunResult lfp_cli(const std::string& args, const fs::path& log_dir) {
  const fs::path log = log_dir / "cli.log";
  const std::string cmd = std::string(LFP_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.log = slurp(log);
  return r;
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

nlohmann::json read_json(const fs::path& p) { return lfp::parse_json_text(slurp(p)); }

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

// Collect every element with the given tag anywhere under `node`.
void collect(const pt::ptree& node, const std::string& tag, std::vector<pt::ptree>& out) {
  for (const auto& [name, child] : node) {
    if (name == tag) out.push_back(child);
    collect(child, tag, out);
  }
}

// Shared eval + bench results on the trivial suite; the slow commands run once.
class CliResults : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("results"));
    write_text(*dir_ / "cfg.json", R"({"bench": {"warmup": 1, "reps": 3}})");
    const auto cfg = "--config '" + (*dir_ / "cfg.json").string() + "' --suite trivial --out '" + dir_->string() + "'";
    eval_ = new RunResult(lfp_cli("eval --inject-gt " + cfg, *dir_));
    bench_ = new RunResult(lfp_cli("bench " + cfg, *dir_));
    plot_ = new RunResult(lfp_cli("export-plot --results '" + dir_->string() + "'", *dir_));
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete eval_;
    delete bench_;
    delete plot_;
  }
  static fs::path* dir_;
  static RunResult* eval_;
  static RunResult* bench_;
  static RunResult* plot_;
};

fs::path* CliResults::dir_ = nullptr;
RunResult* CliResults::eval_ = nullptr;
RunResult* CliResults::bench_ = nullptr;
RunResult* CliResults::plot_ = nullptr;

}  // namespace

TEST(CliGenScenes, WritesSuiteAndIsReproducible) {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  ASSERT_EQ(lfp_cli("gen-scenes --seed-scene 42 --out '" + a.string() + "'", a).code, 0);
  ASSERT_EQ(lfp_cli("gen-scenes --seed-scene 42 --out '" + b.string() + "'", b).code, 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(a / "scenes")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / "scenes" / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 20);
  EXPECT_TRUE(fs::exists(a / "manifest_gen-scenes.json"));
  const auto m = read_json(a / "manifest_gen-scenes.json");
  EXPECT_EQ(m.at("seeds").at("scene"), 42);
  EXPECT_EQ(m.at("scenes").size(), 10u);
  for (int i = 0; i < 10; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scene_%03d", i);
    const auto gt = lfp::deserialize(slurp(a / "scenes" / (std::string(id) + ".gt.json")));
    EXPECT_TRUE(lfp::validate(gt).empty());
    const auto scene = lfp::scene_from_json(read_json(a / "scenes" / (std::string(id) + ".json")));
    EXPECT_EQ(scene.ground_truth, gt);
  }
}

TEST(CliGenScenes, InvalidSpecNamesTheField) {
  const auto d = scratch("gen_bad");
  write_text(d / "cfg.json", R"({"scenes": [{"lane_count": 2}, {"lane_count": 0}]})");
  const auto r = lfp_cli("gen-scenes --config '" + (d / "cfg.json").string() + "' --out '" + d.string() + "'", d);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.log.find("scenes[1]: lane_count must be >= 1"), std::string::npos) << r.log;
  EXPECT_FALSE(fs::exists(d / "scenes"));
}

TEST(CliGenScenes, UnknownConfigKeyIsRejected) {
  const auto d = scratch("gen_unknown");
  write_text(d / "cfg.json", R"({"n_dd": 4})");
  const auto r = lfp_cli("gen-scenes --config '" + (d / "cfg.json").string() + "' --out '" + d.string() + "'", d);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.log.find("n_dd"), std::string::npos) << r.log;
}

TEST(CliRun, InjectedGroundTruthHasZeroLoss) {
  const auto a = scratch("run_a"), b = scratch("run_b");
  ASSERT_EQ(lfp_cli("run --inject-gt --suite trivial --out '" + a.string() + "'", a).code, 0);
  ASSERT_EQ(lfp_cli("run --inject-gt --suite trivial --out '" + b.string() + "'", b).code, 0);
  for (const char* id : {"scene_000", "scene_001", "scene_002"}) {
    const auto j = read_json(a / "run" / (std::string(id) + ".json"));
    for (const auto& [k, v] : j.at("losses").items()) EXPECT_EQ(v.get<double>(), 0.0) << id << " " << k;
    for (const char* key : {"predictions", "lanes", "lane_roi", "lane_weights", "path"}) EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_FALSE(j.at("path").at("waypoints").empty());
    EXPECT_EQ(slurp(a / "run" / (std::string(id) + ".json")), slurp(b / "run" / (std::string(id) + ".json")));
    const auto rows = csv_rows(a / "run" / (std::string(id) + ".losses.csv"));
    ASSERT_EQ(rows.size(), 10u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"loss_name", "value"}));
  }
}

TEST(CliRun, TotalIsTheWeightedSum) {
  const auto d = scratch("run_net");
  const auto gen = lfp_cli("gen-scenes --suite blocked --out '" + d.string() + "'", d);
  ASSERT_EQ(gen.code, 0) << gen.log;
  const auto r = lfp_cli("run --scene '" + (d / "scenes" / "scene_001.json").string() + "' --out '" + d.string() + "'", d);
  ASSERT_EQ(r.code, 0) << r.log;
  const auto l = read_json(d / "run" / "scene_001.json").at("losses");
  const lfp::LossWeights w;
  const double expected = w.gamma * l.at("roi").get<double>() + w.delta * l.at("int").get<double>() +
                          w.epsilon * l.at("dir").get<double>() + w.varepsilon * l.at("occ").get<double>() +
                          w.zeta * l.at("plan").get<double>() + w.eta * l.at("edg").get<double>() +
                          w.theta * l.at("spd").get<double>() + w.iota * l.at("sig").get<double>();
  EXPECT_NEAR(l.at("total").get<double>(), expected, 1e-9 * std::max(1.0, expected));
  EXPECT_GT(l.at("total").get<double>(), 0.0);
}

TEST_F(CliResults, BenchWritesCountsAndLatency) {
  ASSERT_EQ(bench_->code, 0) << bench_->log;
  const auto counts = csv_rows(*dir_ / "feature_counts.csv");
  ASSERT_EQ(counts.size(), 4u);
  std::string header;
  for (std::size_t k = 0; k < counts[0].size(); ++k) header += (k ? "," : "") + counts[0][k];
  EXPECT_EQ(header, lfp::kFeatureCountHeader);
  for (std::size_t i = 1; i < counts.size(); ++i) {
    EXPECT_EQ(counts[i][3], "120");
    EXPECT_GE(std::stod(counts[i][1]), std::stod(counts[i][2]));
    EXPECT_GE(std::stod(counts[i][5]), 3.0);
  }
  const auto lat = csv_rows(*dir_ / "latency.csv");
  EXPECT_EQ(lat[0], (std::vector<std::string>{"stage", "median_ms", "p95_ms", "variant"}));
  EXPECT_GT(lat.size(), 10u);
  const auto m = read_json(*dir_ / "manifest_bench.json");
  EXPECT_EQ(m.at("encoded_features").at("lane_level"), 360);
  EXPECT_GE(m.at("feature_ratio").get<double>(), 3.0);
}

TEST_F(CliResults, EvalWithInjectedGroundTruthDrivesTheRoute) {
  ASSERT_EQ(eval_->code, 0) << eval_->log;
  const auto agg = read_json(*dir_ / "eval_aggregate.json");
  EXPECT_GE(agg.at("ds").get<double>(), 99.0);
  EXPECT_EQ(agg.at("scenes"), 3);
  double sum = 0;
  for (int i = 0; i < 3; ++i) {
    const auto r = read_json(*dir_ / "eval" / ("scene_00" + std::to_string(i) + ".json"));
    EXPECT_EQ(r.at("is").get<double>(), 1.0);
    sum += r.at("ds").get<double>();
  }
  EXPECT_NEAR(agg.at("ds").get<double>(), sum / 3, 1e-9);
  const auto rows = csv_rows(*dir_ / "eval_summary.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows.back()[0], "mean");
  EXPECT_NEAR(std::stod(rows.back()[1]), sum / 3, 1e-5);
  EXPECT_TRUE(fs::exists(*dir_ / "eval_latency.csv"));
  EXPECT_TRUE(fs::exists(*dir_ / "manifest_eval.json"));
}

TEST_F(CliResults, PlotsMatchTheirSources) {
  ASSERT_EQ(plot_->code, 0) << plot_->log;
  pt::ptree bars;
  pt::read_xml((*dir_ / "plots" / "feature_counts.svg").string(), bars);
  std::vector<pt::ptree> rects;
  collect(bars, "rect", rects);
  int bar_count = 0;
  for (const auto& r : rects) bar_count += r.get<std::string>("<xmlattr>.class", "") == "bar";
  EXPECT_EQ(bar_count, 3 * 3);

  pt::ptree lat;
  pt::read_xml((*dir_ / "plots" / "latency.svg").string(), lat);

  for (int i = 0; i < 3; ++i) {
    const std::string id = "scene_00" + std::to_string(i);
    pt::ptree svg;
    pt::read_xml((*dir_ / "plots" / ("scene_" + id + ".svg")).string(), svg);
    std::vector<pt::ptree> circles;
    collect(svg, "circle", circles);
    const auto wps = read_json(*dir_ / "eval" / (id + ".json")).at("first_path").at("waypoints");
    ASSERT_EQ(circles.size(), wps.size());
    for (std::size_t k = 0; k < wps.size(); ++k) {
      EXPECT_EQ(circles[k].get<std::string>("<xmlattr>.class"), "waypoint");
      EXPECT_EQ(std::stod(circles[k].get<std::string>("<xmlattr>.data-x")), wps[k][0].get<double>());
      EXPECT_EQ(std::stod(circles[k].get<std::string>("<xmlattr>.data-y")), wps[k][1].get<double>());
    }
  }
}

TEST(CliExportPlot, MissingInputsExitTwo) {
  const auto d = scratch("plot_empty");
  EXPECT_EQ(lfp_cli("export-plot --results '" + d.string() + "'", d).code, 2);
  // A report without its scene file is also an input error.
  fs::create_directories(d / "eval");
  write_text(d / "eval" / "scene_000.json", R"({"trajectory": [], "first_path": {"waypoints": []}})");
  EXPECT_EQ(lfp_cli("export-plot --results '" + d.string() + "'", d).code, 2);
}

TEST(CliGradcheck, PassesAndCatchesCorruption) {
  const auto d = scratch("grad");
  const auto ok = lfp_cli("gradcheck --out '" + d.string() + "'", d);
  ASSERT_EQ(ok.code, 0) << ok.log;
  const auto rows = csv_rows(d / "gradcheck.csv");
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"loss_name", "max_rel_err"}));
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(std::stod(rows[i][1]), 1e-4) << rows[i][0];
  const auto bad = lfp_cli("gradcheck --corrupt-gradient 0.01 --out '" + d.string() + "'", d);
  EXPECT_EQ(bad.code, 1);
}

TEST(CliArgs, UnknownSubcommandOrFlagFails) {
  const auto d = scratch("args");
  EXPECT_NE(lfp_cli("frobnicate", d).code, 0);
  EXPECT_NE(lfp_cli("run --no-such-flag", d).code, 0);
  EXPECT_NE(lfp_cli("run --weights '" + (d / "missing.lfpw").string() + "'", d).code, 0);
}
