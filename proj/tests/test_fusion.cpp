#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "lfp/fusion.hpp"
#include "lfp/pipeline.hpp"

using namespace lfp;

namespace {

Matrix random_matrix(std::mt19937_64& g, int r, int c, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (auto& v : m.data) v = u(g);
  return m;
}

LaneTensor random_tensor(std::mt19937_64& g, int n_d, int n_p, int dim) {
  std::uniform_real_distribution<double> u(-5, 5);
  LaneTensor t(n_d, n_p, dim);
  for (auto& v : t.data) v = u(g);
  return t;
}

// Plain projection: y = W x + b with W stored out x in.
std::vector<std::vector<double>> project(const Matrix& x, const Linear& l) {
  std::vector<std::vector<double>> y(x.rows, std::vector<double>(l.out));
  for (int r = 0; r < x.rows; ++r) {
    for (int o = 0; o < l.out; ++o) {
      double s = l.bias.empty() ? 0.0 : l.bias[o];
      for (int i = 0; i < l.in; ++i) s += l.weight[o * l.in + i] * x.at(r, i);
      y[r][o] = s;
    }
  }
  return y;
}

// Single-head reference written independently of the library's kernels.
Matrix reference_attention(const Matrix& q, const Matrix& k, const Matrix& v, const MultiHeadAttention& mha) {
  const auto Q = project(q, mha.q), K = project(k, mha.k), V = project(v, mha.v);
  const int e = q.cols;
  Matrix ctx(q.rows, e);
  for (int i = 0; i < q.rows; ++i) {
    std::vector<double> w(k.rows);
    double z = 0;
    for (int j = 0; j < k.rows; ++j) {
      double s = 0;
      for (int d = 0; d < e; ++d) s += Q[i][d] * K[j][d];
      w[j] = std::exp(s / std::sqrt(static_cast<double>(e)));
      z += w[j];
    }
    for (int j = 0; j < k.rows; ++j) {
      for (int d = 0; d < e; ++d) ctx.at(i, d) += w[j] / z * V[j][d];
    }
  }
  const auto out = project(ctx, mha.o);
  Matrix m(q.rows, e);
  for (int i = 0; i < q.rows; ++i) std::copy(out[i].begin(), out[i].end(), m.row(i).begin());
  return m;
}

}  // namespace

TEST(PositionalEncoding, OriginValues) {
  const auto e = positional_encoding(0, 0, 32);
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(e[4 * i + 0], 0.0);
    EXPECT_EQ(e[4 * i + 1], 1.0);
    EXPECT_EQ(e[4 * i + 2], 0.0);
    EXPECT_EQ(e[4 * i + 3], 1.0);
  }
  const auto f = positional_encoding(3, 5, 8);
  EXPECT_DOUBLE_EQ(f[0], std::sin(3.0));
  EXPECT_DOUBLE_EQ(f[3], std::cos(5.0));
  EXPECT_DOUBLE_EQ(f[4], std::sin(3.0 * std::pow(10000.0, -0.5)));
}

TEST(PositionalEncoding, ZeroGridGivesEncodingOnly) {
  ParamStore store(1);
  const auto proj = TokenProjection::make(store, "t", 16, 32);
  const ViewFeatureGrid grid(2, 16, 3, 4);
  const auto seq = positional_encode(grid, proj);
  ASSERT_EQ(seq.size(), 24);
  int r = 0;
  for (int v = 0; v < 2; ++v) {
    for (int y = 0; y < 3; ++y) {
      for (int x = 0; x < 4; ++x, ++r) {
        const auto e = positional_encoding(x, y, 32);
        const auto row = seq.tokens.row(r);
        EXPECT_TRUE(std::equal(row.begin(), row.end(), e.begin()));
      }
    }
  }
}

TEST(PositionalEncoding, IdenticalContentDiffersByEncoding) {
  ParamStore store(2);
  const auto proj = TokenProjection::make(store, "t", 4, 8);
  ViewFeatureGrid grid(1, 4, 2, 2);
  for (int c = 0; c < 4; ++c) {
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 2; ++x) grid.at(0, c, y, x) = 0.3 * c - 0.2;
    }
  }
  const auto seq = positional_encode(grid, proj);
  const auto e0 = positional_encoding(0, 0, 8), e3 = positional_encoding(1, 1, 8);
  for (int k = 0; k < 8; ++k) EXPECT_NEAR(seq.tokens.at(0, k) - seq.tokens.at(3, k), e0[k] - e3[k], 1e-12);
}

TEST(CoarseHead, WeightsInUnitIntervalAndDeterministic) {
  std::mt19937_64 g(3);
  ParamStore store(4);
  const auto head = CoarseHead::make(store, "c", 32, 6, 20);
  for (int trial = 0; trial < 20; ++trial) {
    TokenSequence seq{random_matrix(g, 64, 32, -20, 20), 1, 8, 8};
    const auto a = coarse_lane_detect(seq, head);
    ASSERT_EQ(a.weights.size(), 6u);
    EXPECT_TRUE(a.weights.valid());
    const auto b = coarse_lane_detect(seq, head);
    EXPECT_EQ(a.roi, b.roi);
    EXPECT_EQ(a.weights.weights, b.weights.weights);
  }
}

TEST(CoarseHead, PlantedParametersGiveHandComputedPrior) {
  const int e = 4, n_d = 2, n_p = 2;
  CoarseHead head;
  head.n_d = n_d;
  head.n_p = n_p;
  head.anchors = LaneROI(n_d, n_p);
  // Hidden layer copies the pooled vector into its first half.
  head.hidden = {e, 2 * e, std::vector<double>(2 * e * e, 0.0), std::vector<double>(2 * e, 0.0)};
  for (int i = 0; i < e; ++i) head.hidden.weight[i * e + i] = 1.0;
  const int outs = n_d * n_p * 3 + n_d;
  head.out = {2 * e, outs, std::vector<double>(static_cast<std::size_t>(outs) * 2 * e, 0.0), std::vector<double>(outs)};
  for (int o = 0; o < outs; ++o) {
    head.out.bias[o] = 0.1 * o;
    head.out.weight[o * 2 * e + o % e] = o + 1.0;
  }
  TokenSequence seq{Matrix(2, e), 1, 1, 2};
  seq.tokens.data = {1, 2, 3, 4, 3, 4, 5, 6};  // pooled = (2, 3, 4, 5)
  const double pooled[4] = {2, 3, 4, 5};
  const auto prior = coarse_lane_detect(seq, head);
  int o = 0;
  for (int i = 0; i < n_d; ++i) {
    for (int p = 0; p < n_p; ++p) {
      const Vec3 v = prior.roi.at(i, p);
      for (double got : {v.x, v.y, v.z}) {
        EXPECT_NEAR(got, 0.1 * o + (o + 1.0) * pooled[o % e], 1e-12);
        ++o;
      }
    }
  }
  for (int i = 0; i < n_d; ++i, ++o) {
    EXPECT_NEAR(prior.weights[i], 1.0 / (1.0 + std::exp(-(0.1 * o + (o + 1.0) * pooled[o % e]))), 1e-12);
  }
  // Anchors are added verbatim.
  head.anchors = lane_anchors(n_d, n_p);
  const auto shifted = coarse_lane_detect(seq, head);
  for (std::size_t k = 0; k < shifted.roi.points.size(); ++k) {
    const Vec3 d = shifted.roi.points[k] - prior.roi.points[k];
    EXPECT_NEAR((d - head.anchors.points[k]).norm(), 0.0, 1e-12);
  }
}

TEST(Attention, SingleKeyPassesValueThrough) {
  std::mt19937_64 g(5);
  const auto q = random_matrix(g, 5, 8), k = random_matrix(g, 1, 8), v = random_matrix(g, 1, 8);
  std::vector<double> w;
  const auto out = scaled_dot_product_attention(q, k, v, 2, nullptr, &w);
  for (double x : w) EXPECT_EQ(x, 1.0);
  for (int i = 0; i < 5; ++i) {
    for (int d = 0; d < 8; ++d) EXPECT_EQ(out.at(i, d), v.at(0, d));
  }
}

TEST(Attention, UniformKeysGiveUniformWeights) {
  std::mt19937_64 g(6);
  const auto q = random_matrix(g, 3, 4);
  Matrix k(7, 4);
  for (int j = 0; j < 7; ++j) k.row(j)[0] = 0.5, k.row(j)[3] = -1.0;
  const auto v = random_matrix(g, 7, 4);
  std::vector<double> w;
  scaled_dot_product_attention(q, k, v, 1, nullptr, &w);
  for (double x : w) EXPECT_NEAR(x, 1.0 / 7.0, 1e-15);
}

TEST(Attention, MatchesHandRolledReference) {
  std::mt19937_64 g(7);
  for (int trial = 0; trial < 25; ++trial) {
    ParamStore store(100 + trial);
    const auto mha = MultiHeadAttention::make(store, "a", 4, 1);
    const auto q = random_matrix(g, 3, 4), k = random_matrix(g, 3, 4), v = random_matrix(g, 3, 4);
    const auto got = multi_head_attention(q, k, v, mha);
    const auto want = reference_attention(q, k, v, mha);
    for (std::size_t i = 0; i < got.data.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-12);
  }
}

TEST(Attention, LayerAddsResidualAfterPreNorm) {
  std::mt19937_64 g(8);
  ParamStore store(9);
  const auto layer = AttentionLayer::make_cross(store, "x", 4, 1);
  const auto q = random_matrix(g, 3, 4), kv = random_matrix(g, 5, 4);
  auto ln = [](const Matrix& x) {
    Matrix y(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r) {
      double m = 0, s = 0;
      for (int c = 0; c < x.cols; ++c) m += x.at(r, c) / x.cols;
      for (int c = 0; c < x.cols; ++c) s += (x.at(r, c) - m) * (x.at(r, c) - m) / x.cols;
      for (int c = 0; c < x.cols; ++c) y.at(r, c) = (x.at(r, c) - m) / std::sqrt(s + 1e-5);
    }
    return y;
  };
  const auto att = reference_attention(ln(q), ln(kv), ln(kv), layer.mha);
  const auto got = attention_layer(q, kv, kv, layer);
  for (int i = 0; i < 3; ++i) {
    for (int d = 0; d < 4; ++d) EXPECT_NEAR(got.at(i, d), q.at(i, d) + att.at(i, d), 1e-12);
  }
}

TEST(Attention, RowsSumToOneAndShapeErrors) {
  std::mt19937_64 g(10);
  AttentionTrace trace;
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = random_matrix(g, 1 + trial % 9, 16, -30, 30);
    const auto k = random_matrix(g, 1 + trial % 13, 16, -30, 30);
    scaled_dot_product_attention(q, k, k, 4, &trace);
  }
  EXPECT_GT(trace.rows, 0u);
  EXPECT_LT(trace.max_row_error, 1e-9);
  const auto q = random_matrix(g, 2, 6);
  EXPECT_THROW(scaled_dot_product_attention(q, q, q, 4), StructuralError);
  EXPECT_THROW(scaled_dot_product_attention(q, Matrix(0, 6), Matrix(0, 6), 1), StructuralError);
  ParamStore store(1);
  EXPECT_THROW(MultiHeadAttention::make(store, "m", 6, 4), StructuralError);
}

TEST(ImageTransformer, ShapeDeterminismAndTokenPermutation) {
  std::mt19937_64 g(11);
  BlockConfig cfg;
  ParamStore s1(12), s2(12);
  const auto b1 = ImageBranch::make(s1, "image", cfg, 6, 20);
  const auto b2 = ImageBranch::make(s2, "image", cfg, 6, 20);
  TokenSequence seq{random_matrix(g, 48, 32), 3, 4, 4};
  const auto a = image_transformer(seq, b1.queries, b1);
  EXPECT_EQ(a.n_d, 6);
  EXPECT_EQ(a.n_p, 20);
  EXPECT_EQ(a.dim, 32);
  EXPECT_EQ(a, image_transformer(seq, b2.queries, b2));
  // Tokens already carry their encodings; reordering them is a set permutation.
  std::vector<int> perm(48);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), g);
  TokenSequence shuffled = seq;
  for (int r = 0; r < 48; ++r) {
    const auto src = seq.tokens.row(perm[r]);
    std::copy(src.begin(), src.end(), shuffled.tokens.row(r).begin());
  }
  const auto b = image_transformer(shuffled, b1.queries, b1);
  for (std::size_t k = 0; k < a.data.size(); ++k) EXPECT_NEAR(a.data[k], b.data[k], 1e-10);
}

TEST(LidarQueries, ZeroFeaturesGiveBiasAndPlantedLift) {
  ParamStore store(13);
  const auto lift = Linear::make(store, "lift", 16, 32);
  const FeatureSet zero(6, 20, 16);
  const auto q = init_lidar_queries(zero, lift);
  EXPECT_EQ(q.n_d, 6);
  EXPECT_EQ(q.n_p, 20);
  EXPECT_EQ(q.dim, 32);
  for (int i = 0; i < 6; ++i) {
    const auto row = q.row(i, 7);
    EXPECT_TRUE(std::equal(row.begin(), row.end(), lift.bias.begin()));
  }
  Linear pad{3, 5, std::vector<double>(15, 0.0), std::vector<double>(5, 0.0)};
  for (int i = 0; i < 3; ++i) pad.weight[i * 3 + i] = 1.0;
  std::mt19937_64 g(14);
  const auto f = random_tensor(g, 2, 4, 3);
  const auto padded = init_lidar_queries(f, pad);
  for (int i = 0; i < 2; ++i) {
    for (int p = 0; p < 4; ++p) {
      for (int c = 0; c < 3; ++c) EXPECT_EQ(padded.row(i, p)[c], f.row(i, p)[c]);
      EXPECT_EQ(padded.row(i, p)[3], 0.0);
      EXPECT_EQ(padded.row(i, p)[4], 0.0);
    }
  }
  EXPECT_THROW(init_lidar_queries(FeatureSet(1, 2, 4), pad), StructuralError);
}

TEST(Fusion, BoundaryWeightsAreExact) {
  std::mt19937_64 g(15);
  const auto a = random_tensor(g, 4, 10, 8), b = random_tensor(g, 4, 10, 8);
  const LaneWeights w{{1.0, 0.0, 1.0, 0.0}};
  const auto q = integrate_queries(a, b, w);
  const auto f = enhance_features(a, b, w);
  for (int i = 0; i < 4; ++i) {
    const auto& pick = i % 2 == 0 ? a : b;
    EXPECT_EQ(q.lane(i), pick.lane(i));
    EXPECT_EQ(f.lane(i), pick.lane(i));
  }
}

TEST(Fusion, WorkedValues) {
  QuerySet qi(1, 1, 1), ql(1, 1, 1);
  qi.data[0] = 4.0;
  ql.data[0] = 8.0;
  EXPECT_EQ(integrate_queries(qi, ql, LaneWeights{{0.25}}).data[0], 7.0);
  FeatureSet fi(1, 1, 1), fl(1, 1, 1);
  fi.data[0] = 2.0;
  fl.data[0] = 6.0;
  EXPECT_EQ(enhance_features(fi, fl, LaneWeights{{0.5}}).data[0], 4.0);
}

TEST(Fusion, InteriorMatchesDirectEvaluation) {
  std::mt19937_64 g(16);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n_d = 1 + trial % 6;
    const auto a = random_tensor(g, n_d, 4, 3), b = random_tensor(g, n_d, 4, 3);
    LaneWeights w;
    for (int i = 0; i < n_d; ++i) w.weights.push_back(u(g));
    const auto q = integrate_queries(a, b, w);
    const auto f = enhance_features(a, b, w);
    for (int i = 0; i < n_d; ++i) {
      for (int p = 0; p < 4; ++p) {
        for (int c = 0; c < 3; ++c) {
          const double x = a.row(i, p)[c], y = b.row(i, p)[c], wi = w[i];
          ASSERT_NEAR(q.row(i, p)[c], wi * x + (1 - wi) * y, 1e-12);
          ASSERT_NEAR(f.row(i, p)[c], wi * x + (1 - wi) * y, 1e-12);
        }
      }
    }
  }
}

TEST(Fusion, RejectsBadShapesAndWeights) {
  const LaneTensor a(2, 3, 4), b(2, 3, 5);
  EXPECT_THROW(integrate_queries(a, b, LaneWeights{{0.5, 0.5}}), StructuralError);
  EXPECT_THROW(integrate_queries(a, a, LaneWeights{{0.5}}), StructuralError);
  EXPECT_THROW(enhance_features(a, a, LaneWeights{{0.5, 1.5}}), std::invalid_argument);
  EXPECT_THROW(enhance_features(a, a, LaneWeights{{-0.1, 0.5}}), std::invalid_argument);
}

TEST(LidarTransformer, LanesIndependentAndThreadCountInvariant) {
  std::mt19937_64 g(17);
  ParamStore store(18);
  const auto branch = LidarBranch::make(store, "lidar", BlockConfig{}, 16);
  const auto q = random_tensor(g, 6, 20, 32), mem = random_tensor(g, 6, 20, 32);
  const auto a = lidar_transformer(q, mem, branch, 1);
  EXPECT_EQ(a.n_d, 6);
  EXPECT_EQ(a.n_p, 20);
  EXPECT_EQ(a.dim, 32);
  EXPECT_EQ(a, lidar_transformer(q, mem, branch, 4));
  const int perm[6] = {3, 0, 5, 1, 4, 2};
  LaneTensor qp(6, 20, 32), mp(6, 20, 32);
  for (int i = 0; i < 6; ++i) {
    qp.set_lane(i, q.lane(perm[i]));
    mp.set_lane(i, mem.lane(perm[i]));
  }
  const auto b = lidar_transformer(qp, mp, branch, 2);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(b.lane(i), a.lane(perm[i]));
  EXPECT_THROW(lidar_transformer(q, LaneTensor(6, 19, 32), branch), StructuralError);
}

TEST(ShapeContracts, RandomConfigurations) {
  std::mt19937_64 g(19);
  for (int trial = 0; trial < 12; ++trial) {
    BlockConfig cfg;
    cfg.heads = 1 << (trial % 3);
    cfg.embed = 4 * cfg.heads * (1 + trial % 2);
    cfg.layers = 1 + trial % 2;
    ASSERT_TRUE(validate(cfg).empty());
    const int n_d = 1 + trial % 4, n_p = 2 * (1 + trial % 5);
    ParamStore store(trial);
    const auto img = ImageBranch::make(store, "image", cfg, n_d, n_p);
    const auto lid = LidarBranch::make(store, "lidar", cfg, 5);
    TokenSequence seq{random_matrix(g, 6, cfg.embed), 1, 2, 3};
    const auto f_img = image_transformer(seq, img.queries, img);
    const auto q_l = init_lidar_queries(random_tensor(g, n_d, n_p, 5), lid.lift);
    const auto f_lid = lidar_transformer(q_l, q_l, lid);
    for (const auto* t : {&f_img, &q_l, &f_lid}) {
      EXPECT_EQ(t->n_d, n_d);
      EXPECT_EQ(t->n_p, n_p);
      EXPECT_EQ(t->dim, cfg.embed);
    }
  }
  EXPECT_FALSE(validate(BlockConfig{2, 3, 32, 0}).empty());
  EXPECT_FALSE(validate(BlockConfig{0, 4, 32, 0}).empty());
}

TEST(Pipeline, DeterministicAcrossRunsAndJobs) {
  SceneSpec spec;
  spec.lane_count = 2;
  spec.agent_count = 1;
  spec.clutter_density = 0.5;
  const auto scene = generate_scene(spec);
  const Pipeline p1(ModelConfig{}, 7), p2(ModelConfig{}, 7);
  const auto cloud = transform_cloud(p1.render(scene), scene.start);
  FrameOptions one, four;
  four.jobs = 4;
  const auto a = p1.run(scene, scene.start, cloud, one);
  const auto b = p2.run(scene, scene.start, cloud, one);
  const auto c = p1.run(scene, scene.start, cloud, four);
  EXPECT_EQ(a.predictions, b.predictions);
  EXPECT_EQ(a.predictions, c.predictions);
  EXPECT_EQ(a.prior.roi, c.prior.roi);
  EXPECT_LT(a.attention.max_row_error, 1e-9);
  EXPECT_GT(a.attention.rows, 0u);
  EXPECT_EQ(a.encoded_features, 120u);
  FrameOptions dense;
  dense.variant = Variant::dense;
  const auto d = p1.run(scene, scene.start, cloud, dense);
  EXPECT_EQ(d.encoded_features, d.pillar_count);
  EXPECT_LT(d.attention.max_row_error, 1e-9);
}

TEST(Pipeline, WeightOverridesAndUnknownBlocks) {
  const Pipeline base(ModelConfig{}, 7);
  auto blocks = base.parameters();
  const auto bytes = encode_weight_blocks(blocks);
  EXPECT_EQ(decode_weight_blocks(bytes), blocks);
  EXPECT_THROW(decode_weight_blocks(bytes.substr(0, bytes.size() - 3)), ParseError);
  // Overriding every block with its own values reproduces the seeded model.
  const Pipeline same(ModelConfig{}, 99, blocks);
  EXPECT_EQ(same.parameters(), base.parameters());
  blocks["no.such.block"] = {1.0};
  EXPECT_THROW(Pipeline(ModelConfig{}, 7, blocks), StructuralError);
  WeightBlocks wrong{{"heads.speed.bias", {1.0, 2.0}}};
  EXPECT_THROW(Pipeline(ModelConfig{}, 7, wrong), StructuralError);
}
