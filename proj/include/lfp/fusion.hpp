#pragma once

// Image branch (token projection, positional encoding, coarse lane prior,
// encoder/decoder), LiDAR branch (query lift and per-lane decoder), and the
// confidence-weighted query integration and feature enhancement.

#include <cmath>
#include <string>
#include <vector>

#include "lfp/nn.hpp"
#include "lfp/pillar.hpp"
#include "lfp/scene.hpp"

namespace lfp {

struct BlockConfig {
  int layers = 2;
  int heads = 4;
  int embed = 32;
  std::uint64_t seed = 0;
};

inline std::vector<std::string> validate(const BlockConfig& c) {
  std::vector<std::string> out;
  if (c.layers < 1) out.push_back("layers must be >= 1");
  if (c.heads < 1 || c.embed % c.heads != 0) out.push_back("embed must be divisible by heads");
  if (c.embed % 4 != 0) out.push_back("embed must be divisible by 4 for the 2-D positional encoding");
  return out;
}

/// Tokens row-major: one row of `embed` values per spatial cell, views
/// concatenated (view-major, then row, then column).
struct TokenSequence {
  Matrix tokens;
  int views = 0;
  int height = 0;
  int width = 0;

  int size() const { return tokens.rows; }
  int embed() const { return tokens.cols; }
};

/// 2-D sinusoidal code, interleaved as [sin x, cos x, sin y, cos y] per frequency.
inline std::vector<double> positional_encoding(int x, int y, int embed) {
  std::vector<double> e(static_cast<std::size_t>(embed));
  const int freqs = embed / 4;
  for (int i = 0; i < freqs; ++i) {
    const double omega = std::pow(10000.0, -4.0 * i / embed);
    e[4 * i + 0] = std::sin(x * omega);
    e[4 * i + 1] = std::cos(x * omega);
    e[4 * i + 2] = std::sin(y * omega);
    e[4 * i + 3] = std::cos(y * omega);
  }
  return e;
}

/// 1x1 projection (bias-free) from grid channels to the embedding.
struct TokenProjection {
  Linear proj;

  static TokenProjection make(ParamStore& store, const std::string& name, int channels, int embed) {
    return {Linear::make(store, name, channels, embed, /*with_bias=*/false)};
  }
};

inline TokenSequence positional_encode(const ViewFeatureGrid& grid, const TokenProjection& p) {
  if (grid.channels != p.proj.in) throw StructuralError("positional_encode: channel mismatch");
  const int embed = p.proj.out;
  TokenSequence seq{Matrix(grid.views * grid.height * grid.width, embed), grid.views, grid.height, grid.width};
  std::vector<double> cell(static_cast<std::size_t>(grid.channels));
  int r = 0;
  for (int v = 0; v < grid.views; ++v) {
    for (int y = 0; y < grid.height; ++y) {
      for (int x = 0; x < grid.width; ++x, ++r) {
        for (int c = 0; c < grid.channels; ++c) cell[c] = grid.at(v, c, y, x);
        auto out = seq.tokens.row(r);
        p.proj.apply(cell, out);
        const auto e = positional_encoding(x, y, embed);
        for (int k = 0; k < embed; ++k) out[k] += e[k];
      }
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Coarse lane prior

struct CoarseLanePrior {
  LaneROI roi;
  LaneWeights weights;
};

/// Evenly spaced straight lane slots ahead of the ego; the head regresses
/// offsets from these.
inline LaneROI lane_anchors(int n_d, int n_p, double lane_width = 3.5, double near = 2.0, double far = 40.0) {
  LaneROI a(n_d, n_p);
  const int half = n_p / 2;
  for (int i = 0; i < n_d; ++i) {
    const double yc = (i - 1) * lane_width;
    for (int j = 0; j < half; ++j) {
      const double x = half == 1 ? near : near + (far - near) * j / (half - 1);
      a.at(i, j) = {x, yc + 0.5 * lane_width, 0.0};
      a.at(i, half + j) = {x, yc - 0.5 * lane_width, 0.0};
    }
  }
  return a;
}

struct CoarseHead {
  int n_d = 0;
  int n_p = 0;
  Linear hidden;
  Linear out;  // n_d * n_p * 3 ROI values, then n_d weight logits
  LaneROI anchors;

  static CoarseHead make(ParamStore& store, const std::string& name, int embed, int n_d, int n_p, bool use_anchors = true) {
    CoarseHead h;
    h.n_d = n_d;
    h.n_p = n_p;
    h.hidden = Linear::make(store, name + ".hidden", embed, 2 * embed);
    h.out = Linear::make(store, name + ".out", 2 * embed, n_d * n_p * 3 + n_d);
    h.anchors = use_anchors ? lane_anchors(n_d, n_p) : LaneROI(n_d, n_p);
    return h;
  }
};

inline CoarseLanePrior coarse_lane_detect(const TokenSequence& seq, const CoarseHead& head) {
  const int embed = seq.embed();
  if (embed != head.hidden.in) throw StructuralError("coarse_lane_detect: embed mismatch");
  std::vector<double> pooled(static_cast<std::size_t>(embed), 0.0);
  for (int r = 0; r < seq.size(); ++r) {
    const auto row = seq.tokens.row(r);
    for (int k = 0; k < embed; ++k) pooled[k] += row[k];
  }
  for (auto& v : pooled) v /= std::max(1, seq.size());
  std::vector<double> h(static_cast<std::size_t>(head.hidden.out));
  head.hidden.apply(pooled, h);
  for (auto& v : h) v = std::max(0.0, v);
  std::vector<double> o(static_cast<std::size_t>(head.out.out));
  head.out.apply(h, o);

  CoarseLanePrior prior{LaneROI(head.n_d, head.n_p), {}};
  std::size_t k = 0;
  for (int i = 0; i < head.n_d; ++i) {
    for (int p = 0; p < head.n_p; ++p, k += 3) prior.roi.at(i, p) = head.anchors.at(i, p) + Vec3{o[k], o[k + 1], o[k + 2]};
  }
  for (int i = 0; i < head.n_d; ++i) prior.weights.weights.push_back(logistic(o[k++]));
  return prior;
}

// ---------------------------------------------------------------------------
// Image branch

struct ImageBranch {
  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  LayerNorm encoder_norm;
  LayerNorm decoder_norm;
  QuerySet queries;  // learned lane-level image queries

  static ImageBranch make(ParamStore& store, const std::string& name, const BlockConfig& cfg, int n_d, int n_p) {
    ImageBranch b;
    for (int k = 0; k < cfg.layers; ++k) {
      b.encoder.push_back(EncoderLayer::make(store, name + ".enc" + std::to_string(k), cfg.embed, cfg.heads));
      b.decoder.push_back(DecoderLayer::make(store, name + ".dec" + std::to_string(k), cfg.embed, cfg.heads));
    }
    b.encoder_norm = LayerNorm::make(store, name + ".enc_norm", cfg.embed);
    b.decoder_norm = LayerNorm::make(store, name + ".dec_norm", cfg.embed);
    b.queries = QuerySet(n_d, n_p, cfg.embed);
    b.queries.data = store.take(name + ".queries", b.queries.data.size(), Init::uniform, cfg.embed);
    return b;
  }
};

/// K encoder layers over the tokens, then K decoder layers in which the lane
/// queries cross-attend to the encoded tokens.
inline FeatureSet image_transformer(const TokenSequence& seq, const QuerySet& q_image, const ImageBranch& branch,
                                    AttentionTrace* trace = nullptr) {
  if (seq.embed() != q_image.dim) throw StructuralError("image_transformer: embed mismatch");
  Matrix memory = seq.tokens;
  for (const auto& layer : branch.encoder) memory = layer.forward(memory, trace);
  memory = branch.encoder_norm.forward(memory);
  Matrix x = q_image.flat();
  for (const auto& layer : branch.decoder) x = layer.forward(x, memory, trace);
  return LaneTensor::from_flat(branch.decoder_norm.forward(x), q_image.n_d, q_image.n_p);
}

// ---------------------------------------------------------------------------
// LiDAR branch

struct LidarBranch {
  Linear lift;  // pillar channels -> embed
  std::vector<DecoderLayer> layers;
  LayerNorm out_norm;

  static LidarBranch make(ParamStore& store, const std::string& name, const BlockConfig& cfg, int pillar_channels) {
    LidarBranch b;
    b.lift = Linear::make(store, name + ".lift", pillar_channels, cfg.embed);
    for (int k = 0; k < cfg.layers; ++k) {
      b.layers.push_back(DecoderLayer::make(store, name + ".dec" + std::to_string(k), cfg.embed, cfg.heads));
    }
    b.out_norm = LayerNorm::make(store, name + ".out_norm", cfg.embed);
    return b;
  }
};

/// Affine lift of the lane pillar features into the query embedding.
inline QuerySet init_lidar_queries(const FeatureSet& f_lane, const Linear& lift) {
  if (f_lane.dim != lift.in) throw StructuralError("init_lidar_queries: channel mismatch");
  QuerySet q(f_lane.n_d, f_lane.n_p, lift.out);
  for (int i = 0; i < f_lane.n_d; ++i) {
    for (int p = 0; p < f_lane.n_p; ++p) lift.apply(f_lane.row(i, p), q.row(i, p));
  }
  return q;
}

/// Lanes are processed independently: each lane's queries attend among
/// themselves and into that lane's lifted pillar features.
inline FeatureSet lidar_transformer(const QuerySet& q_integrated, const QuerySet& lane_memory, const LidarBranch& branch,
                                    int jobs = 1, AttentionTrace* trace = nullptr) {
  if (!q_integrated.same_shape(lane_memory)) throw StructuralError("lidar_transformer: shape mismatch");
  FeatureSet out(q_integrated.n_d, q_integrated.n_p, q_integrated.dim);
  std::vector<AttentionTrace> traces(static_cast<std::size_t>(q_integrated.n_d));
  parallel_for(static_cast<std::size_t>(q_integrated.n_d), jobs, [&](std::size_t i) {
    const int lane = static_cast<int>(i);
    Matrix x = q_integrated.lane(lane);
    const Matrix memory = lane_memory.lane(lane);
    for (const auto& layer : branch.layers) x = layer.forward(x, memory, &traces[i]);
    out.set_lane(lane, branch.out_norm.forward(x));
  });
  if (trace) {
    for (const auto& t : traces) trace->merge(t);
  }
  return out;
}

/// Dense variant: every lane attends into the full lifted pillar set.
inline FeatureSet lidar_transformer_dense(const QuerySet& q_integrated, const Matrix& memory, const LidarBranch& branch,
                                          int jobs = 1, AttentionTrace* trace = nullptr) {
  FeatureSet out(q_integrated.n_d, q_integrated.n_p, q_integrated.dim);
  if (memory.rows == 0) return out;
  std::vector<AttentionTrace> traces(static_cast<std::size_t>(q_integrated.n_d));
  parallel_for(static_cast<std::size_t>(q_integrated.n_d), jobs, [&](std::size_t i) {
    const int lane = static_cast<int>(i);
    Matrix x = q_integrated.lane(lane);
    for (const auto& layer : branch.layers) x = layer.forward(x, memory, &traces[i]);
    out.set_lane(lane, branch.out_norm.forward(x));
  });
  if (trace) {
    for (const auto& t : traces) trace->merge(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fusion

namespace detail {

inline void check_fusion_args(const LaneTensor& a, const LaneTensor& b, const LaneWeights& w, const char* who) {
  if (!a.same_shape(b)) throw StructuralError(std::string(who) + ": shape mismatch");
  if (w.size() != static_cast<std::size_t>(a.n_d)) throw StructuralError(std::string(who) + ": one weight per lane required");
  if (!w.valid()) throw std::invalid_argument(std::string(who) + ": lane weights must lie in [0, 1]");
}

}  // namespace detail

/// q_integrated[i] = (1 - a_i) q_image[i] + a_i q_lidar[i] with a_i = 1 - w_i:
/// low image confidence hands the lane to the LiDAR query.
inline QuerySet integrate_queries(const QuerySet& q_image, const QuerySet& q_lidar, const LaneWeights& w) {
  detail::check_fusion_args(q_image, q_lidar, w, "integrate_queries");
  QuerySet out(q_image.n_d, q_image.n_p, q_image.dim);
  const std::size_t per_lane = static_cast<std::size_t>(q_image.n_p) * q_image.dim;
  for (int i = 0; i < q_image.n_d; ++i) {
    const double alpha = 1.0 - w[static_cast<std::size_t>(i)];
    for (std::size_t k = i * per_lane; k < (i + 1) * per_lane; ++k) {
      out.data[k] = (1.0 - alpha) * q_image.data[k] + alpha * q_lidar.data[k];
    }
  }
  return out;
}

/// f_enhanced[i] = b_i f_image[i] + (1 - b_i) f_lidar[i] with b_i = w_i.
inline FeatureSet enhance_features(const FeatureSet& f_image, const FeatureSet& f_lidar, const LaneWeights& w) {
  detail::check_fusion_args(f_image, f_lidar, w, "enhance_features");
  FeatureSet out(f_image.n_d, f_image.n_p, f_image.dim);
  const std::size_t per_lane = static_cast<std::size_t>(f_image.n_p) * f_image.dim;
  for (int i = 0; i < f_image.n_d; ++i) {
    const double beta = w[static_cast<std::size_t>(i)];
    for (std::size_t k = i * per_lane; k < (i + 1) * per_lane; ++k) {
      out.data[k] = beta * f_image.data[k] + (1.0 - beta) * f_lidar.data[k];
    }
  }
  return out;
}

}  // namespace lfp
