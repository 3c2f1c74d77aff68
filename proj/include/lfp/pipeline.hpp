#pragma once

// End-to-end forward pass for one frame: camera views and LiDAR in, double-edge
// predictions and an interpreted path out, with per-stage wall-clock timings.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lfp/double_edge.hpp"
#include "lfp/fusion.hpp"
#include "lfp/heads.hpp"
#include "lfp/losses.hpp"
#include "lfp/nn.hpp"
#include "lfp/pillar.hpp"
#include "lfp/scene.hpp"

namespace lfp {

struct ModelConfig {
  int n_d = 6;
  int n_p = 20;
  int channels = 16;  // C: view feature and pillar feature channels
  BlockConfig block;  // K, heads, E
  ViewConfig view;
  GridSpec voxel_grid = GridSpec::voxel();
  GridSpec pillar_grid = GridSpec::pillar();
  double r_max = 2.0;
  double lidar_density = 8.0;  // points per m^2 of surface
  double lidar_noise = 0.02;
  bool use_anchors = true;
};

inline std::vector<std::string> validate(const ModelConfig& c) {
  std::vector<std::string> out;
  if (c.n_d < 1) out.push_back("n_d must be >= 1");
  if (c.n_p < 2 || c.n_p % 2 != 0) out.push_back("n_p must be even and >= 2");
  if (c.channels < 1) out.push_back("c_channels must be >= 1");
  if (c.view.views < 1 || c.view.height < 1 || c.view.width < 1) out.push_back("view grid must be non-empty");
  for (auto& d : validate(c.block)) out.push_back(d);
  for (auto& d : validate(c.voxel_grid)) out.push_back("voxel grid: " + d);
  for (auto& d : validate(c.pillar_grid)) out.push_back("pillar grid: " + d);
  if (c.pillar_grid.resolution.z < c.pillar_grid.hi.z - c.pillar_grid.lo.z) {
    out.push_back("pillar grid: dz must cover the whole z-range");
  }
  if (!(c.r_max > 0)) out.push_back("r_max must be > 0");
  if (!(c.lidar_density > 0)) out.push_back("lidar_density must be > 0");
  if (!(c.lidar_noise >= 0)) out.push_back("lidar_noise must be >= 0");
  return out;
}

enum class Variant { lane_level, dense };

inline const char* to_string(Variant v) { return v == Variant::dense ? "dense" : "lane_level"; }

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"view_features", "image_branch", "pillarize",
                                                 "lane_sample",   "pillar_encode", "lidar_branch",
                                                 "fusion",        "heads",         "interpret"};
  return names;
}

using StageTimings = std::vector<std::pair<std::string, double>>;

struct FrameOptions {
  Variant variant = Variant::lane_level;
  int jobs = 1;
  // Replace the coarse ROI and the head outputs with ground truth.
  bool inject_ground_truth = false;
};

struct FrameResult {
  CoarseLanePrior prior;        // as used for sampling (ground truth when injected)
  Predictions predictions;
  DoubleEdgeSet lanes;          // predictions as a double-edge set
  PlannedPath path;             // ego frame
  std::size_t pillar_count = 0;
  std::size_t encoded_features = 0;  // pillars passed through the encoder
  std::size_t empty_lane_samples = 0;
  AttentionTrace attention;
  StageTimings timings;
};

class Pipeline {
 public:
  explicit Pipeline(ModelConfig cfg, std::uint64_t param_seed, WeightBlocks overrides = {})
      : cfg_(std::move(cfg)), seed_(param_seed) {
    if (auto d = validate(cfg_); !d.empty()) throw ValidationError(std::move(d));
    ParamStore store(param_seed, std::move(overrides));
    const int e = cfg_.block.embed;
    view_proj_ = ViewProjection::seeded(param_seed, cfg_.channels);
    tokens_ = TokenProjection::make(store, "image.tokens", cfg_.channels, e);
    coarse_ = CoarseHead::make(store, "image.coarse", e, cfg_.n_d, cfg_.n_p, cfg_.use_anchors);
    image_ = ImageBranch::make(store, "image", cfg_.block, cfg_.n_d, cfg_.n_p);
    pillar_enc_ = PillarEncoder::make(store, "lidar.pillar", cfg_.channels);
    lidar_ = LidarBranch::make(store, "lidar", cfg_.block, cfg_.channels);
    heads_ = HeadParams::make(store, "heads", e);
    if (auto unused = store.unused_overrides(); !unused.empty()) {
      std::string msg = "weight file has unknown blocks:";
      for (const auto& n : unused) msg += " " + n;
      throw StructuralError(msg);
    }
    blocks_ = store.blocks();
  }

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t param_seed() const { return seed_; }
  const WeightBlocks& parameters() const { return blocks_; }

  /// `cloud` is in the ego frame of `pose`.
  FrameResult run(const Scene& scene, const Pose2& pose, const PointCloud& cloud, const FrameOptions& opt = {}) const {
    FrameResult r;
    Stopwatch sw;
    auto lap = [&](const char* stage) {
      r.timings.emplace_back(stage, sw.elapsed_ms());
      sw.reset();
    };

    const auto grid = synth_view_features(scene, pose, cfg_.view, view_proj_);
    lap("view_features");

    const auto seq = positional_encode(grid, tokens_);
    r.prior = coarse_lane_detect(seq, coarse_);
    const FeatureSet f_image = image_transformer(seq, image_.queries, image_, &r.attention);
    std::optional<DoubleEdgeSet> gt;
    if (opt.inject_ground_truth) {
      gt = ground_truth_at(scene, pose, cfg_.n_p);
      r.prior.roi = roi_from_ground_truth(*gt, cfg_.n_d);
    }
    lap("image_branch");

    const PillarSet pillars = pillarize(cloud, cfg_.pillar_grid);
    r.pillar_count = pillars.count();
    lap("pillarize");

    QuerySet q_lidar;
    FeatureSet f_lidar;
    if (opt.variant == Variant::lane_level) {
      const LanePillarSet sampled = lane_sample(pillars, r.prior.roi, cfg_.r_max, opt.jobs);
      for (const auto& e : sampled.entries) r.empty_lane_samples += e.empty ? 1 : 0;
      lap("lane_sample");
      const FeatureSet f_lane = encode_pillars(sampled, pillar_enc_);
      r.encoded_features = sampled.size();
      lap("pillar_encode");
      q_lidar = init_lidar_queries(f_lane, lidar_.lift);
      const QuerySet q_int = integrate_queries(image_.queries, q_lidar, r.prior.weights);
      f_lidar = lidar_transformer(q_int, q_lidar, lidar_, opt.jobs, &r.attention);
      lap("lidar_branch");
    } else {
      sw.reset();  // no lane sampling in this variant
      const Matrix dense = encode_all_pillars(pillars, pillar_enc_);
      r.encoded_features = pillars.count();
      lap("pillar_encode");
      // No lane-level LiDAR queries exist here; the image queries attend into
      // every lifted pillar.
      f_lidar = lidar_transformer_dense(image_.queries, lidar_.lift.forward(dense), lidar_, opt.jobs, &r.attention);
      lap("lidar_branch");
    }

    const FeatureSet f_enh = enhance_features(f_image, f_lidar, r.prior.weights);
    lap("fusion");

    r.predictions = heads_forward(f_enh, heads_);
    if (gt) {
      r.predictions = predictions_from_ground_truth(*gt, cfg_.n_d, reference_speed(scene, pose), scene.signal);
    }
    lap("heads");

    r.lanes = to_double_edge(r.predictions);
    r.path = interpret_path(r.lanes, r.predictions.speed);
    lap("interpret");
    return r;
  }

  /// Renders the scene's LiDAR in the scene frame with this pipeline's settings.
  PointCloud render(const Scene& scene) const {
    return render_lidar(scene, cfg_.lidar_density, cfg_.lidar_noise, scene.spec.seed);
  }

 private:
  ModelConfig cfg_;
  std::uint64_t seed_;
  ViewProjection view_proj_;
  TokenProjection tokens_;
  CoarseHead coarse_;
  ImageBranch image_;
  PillarEncoder pillar_enc_;
  LidarBranch lidar_;
  HeadParams heads_;
  WeightBlocks blocks_;
};

/// Loss targets for a frame at `pose`: ground truth and the route target in
/// the ego frame.
inline LossTargets frame_targets(const Scene& scene, const Pose2& pose, int n_p) {
  return {ground_truth_at(scene, pose, n_p), pose.to_local(scene.target), reference_speed(scene, pose), scene.signal};
}

}  // namespace lfp
