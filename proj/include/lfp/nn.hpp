#pragma once

// Forward-only building blocks: dense tensors, a seeded parameter store with
// an optional binary weight file, linear layers, layer norm and multi-head
// scaled dot-product attention.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lfp/common.hpp"

namespace lfp {

/// Row-major rows x cols.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// n_d lanes x n_p points x dim channels. Used for queries and lane features.
struct LaneTensor {
  int n_d = 0;
  int n_p = 0;
  int dim = 0;
  std::vector<double> data;

  LaneTensor() = default;
  LaneTensor(int lanes, int points, int channels)
      : n_d(lanes), n_p(points), dim(channels), data(static_cast<std::size_t>(lanes) * points * channels, 0.0) {}

  std::span<double> row(int i, int p) { return {data.data() + offset(i, p), static_cast<std::size_t>(dim)}; }
  std::span<const double> row(int i, int p) const { return {data.data() + offset(i, p), static_cast<std::size_t>(dim)}; }

  /// Lane i as an n_p x dim matrix (copy).
  Matrix lane(int i) const {
    Matrix m(n_p, dim);
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(offset(i, 0)), m.data.size(), m.data.begin());
    return m;
  }

  void set_lane(int i, const Matrix& m) {
    if (m.rows != n_p || m.cols != dim) throw StructuralError("set_lane: shape mismatch");
    std::copy(m.data.begin(), m.data.end(), data.begin() + static_cast<std::ptrdiff_t>(offset(i, 0)));
  }

  /// All lanes stacked into (n_d * n_p) x dim.
  Matrix flat() const {
    Matrix m(n_d * n_p, dim);
    m.data = data;
    return m;
  }

  static LaneTensor from_flat(const Matrix& m, int lanes, int points) {
    if (m.rows != lanes * points) throw StructuralError("from_flat: row count mismatch");
    LaneTensor t(lanes, points, m.cols);
    t.data = m.data;
    return t;
  }

  bool same_shape(const LaneTensor& o) const { return n_d == o.n_d && n_p == o.n_p && dim == o.dim; }
  friend bool operator==(const LaneTensor&, const LaneTensor&) = default;

 private:
  std::size_t offset(int i, int p) const { return (static_cast<std::size_t>(i) * n_p + p) * dim; }
};

using QuerySet = LaneTensor;
using FeatureSet = LaneTensor;

// ---------------------------------------------------------------------------
// Parameters

enum class Init { uniform, ones, zeros };

using WeightBlocks = std::map<std::string, std::vector<double>>;

/// Named parameter blocks. Each block is drawn from its own stream derived
/// from (seed, name), so values never depend on construction order. Blocks
/// present in `overrides` are taken verbatim instead.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed, WeightBlocks overrides = {})
      : seed_(seed), overrides_(std::move(overrides)) {}

  std::vector<double> take(const std::string& name, std::size_t count, Init init, int fan_in = 1) {
    std::vector<double> values;
    if (auto it = overrides_.find(name); it != overrides_.end()) {
      if (it->second.size() != count) {
        throw StructuralError("weight block '" + name + "' has " + std::to_string(it->second.size()) +
                              " values, expected " + std::to_string(count));
      }
      values = it->second;
      used_.insert(name);
    } else {
      values.assign(count, init == Init::ones ? 1.0 : 0.0);
      if (init == Init::uniform) {
        Rng rng(derive_seed(seed_, name));
        const double scale = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
        for (auto& v : values) v = scale * rng.uniform(-1.0, 1.0);
      }
    }
    blocks_[name] = values;
    return values;
  }

  std::uint64_t seed() const { return seed_; }
  const WeightBlocks& blocks() const { return blocks_; }

  std::vector<std::string> unused_overrides() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : overrides_) {
      if (!used_.contains(name)) out.push_back(name);
    }
    return out;
  }

 private:
  std::uint64_t seed_;
  WeightBlocks overrides_;
  WeightBlocks blocks_;
  std::set<std::string> used_;
};

/// "LFPW" magic, then per block: u16 name length, name bytes, u64 element
/// count, float64 payload; little-endian, blocks until end of input.
inline std::string encode_weight_blocks(const WeightBlocks& blocks) {
  static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");
  std::string out = "LFPW";
  for (const auto& [name, values] : blocks) {
    if (name.size() > 0xFFFF) throw StructuralError("weight block name too long: " + name.substr(0, 32));
    const auto len = static_cast<std::uint16_t>(name.size());
    const auto count = static_cast<std::uint64_t>(values.size());
    out.append(reinterpret_cast<const char*>(&len), sizeof len);
    out.append(name);
    out.append(reinterpret_cast<const char*>(&count), sizeof count);
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
  }
  return out;
}

inline WeightBlocks decode_weight_blocks(std::string_view bytes) {
  if (bytes.substr(0, 4) != "LFPW") throw ParseError("missing LFPW header", "byte 0");
  WeightBlocks blocks;
  std::size_t pos = 4;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - pos < n) throw ParseError(std::string("truncated ") + what, "byte " + std::to_string(pos));
  };
  while (pos < bytes.size()) {
    std::uint16_t len = 0;
    need(sizeof len, "name length");
    std::memcpy(&len, bytes.data() + pos, sizeof len);
    pos += sizeof len;
    need(len, "name");
    std::string name(bytes.substr(pos, len));
    pos += len;
    std::uint64_t count = 0;
    need(sizeof count, "element count");
    std::memcpy(&count, bytes.data() + pos, sizeof count);
    pos += sizeof count;
    if (count > (bytes.size() - pos) / sizeof(double)) throw ParseError("truncated payload of '" + name + "'", "byte " + std::to_string(pos));
    std::vector<double> values(count);
    std::memcpy(values.data(), bytes.data() + pos, count * sizeof(double));
    pos += count * sizeof(double);
    if (!blocks.emplace(std::move(name), std::move(values)).second) {
      throw ParseError("duplicate weight block", "byte " + std::to_string(pos));
    }
  }
  return blocks;
}

// ---------------------------------------------------------------------------
// Layers

namespace detail {

/// Dot product with four interleaved partial sums; the summation order is
/// fixed, so results do not depend on the caller.
inline double dot(const double* a, const double* b, int n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace detail

struct Linear {
  int in = 0;
  int out = 0;
  std::vector<double> weight;  // out x in
  std::vector<double> bias;    // out, empty when bias-free

  static Linear make(ParamStore& store, const std::string& name, int in, int out, bool with_bias = true) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = store.take(name + ".weight", static_cast<std::size_t>(in) * out, Init::uniform, in);
    if (with_bias) l.bias = store.take(name + ".bias", static_cast<std::size_t>(out), Init::uniform, in);
    return l;
  }

  void apply(std::span<const double> x, std::span<double> y) const {
    for (int o = 0; o < out; ++o) {
      const double* w = weight.data() + static_cast<std::size_t>(o) * in;
      y[o] = (bias.empty() ? 0.0 : bias[o]) + detail::dot(w, x.data(), in);
    }
  }

  Matrix forward(const Matrix& x) const {
    if (x.cols != in) throw StructuralError("Linear: input has " + std::to_string(x.cols) + " columns, expected " + std::to_string(in));
    Matrix y(x.rows, out);
    for (int r = 0; r < x.rows; ++r) apply(x.row(r), y.row(r));
    return y;
  }
};

struct LayerNorm {
  std::vector<double> gamma;
  std::vector<double> beta;
  double eps = 1e-5;

  static LayerNorm make(ParamStore& store, const std::string& name, int dim) {
    return {store.take(name + ".gamma", static_cast<std::size_t>(dim), Init::ones),
            store.take(name + ".beta", static_cast<std::size_t>(dim), Init::zeros)};
  }

  Matrix forward(const Matrix& x) const {
    Matrix y(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r) {
      const auto in = x.row(r);
      double mean = 0;
      for (double v : in) mean += v;
      mean /= x.cols;
      double var = 0;
      for (double v : in) var += (v - mean) * (v - mean);
      var /= x.cols;
      const double inv = 1.0 / std::sqrt(var + eps);
      auto out = y.row(r);
      for (int c = 0; c < x.cols; ++c) out[c] = (in[c] - mean) * inv * gamma[c] + beta[c];
    }
    return y;
  }
};

/// Softmax row-sum bookkeeping, filled in by every attention evaluation.
struct AttentionTrace {
  double max_row_error = 0.0;
  std::size_t rows = 0;

  void merge(const AttentionTrace& o) {
    max_row_error = std::max(max_row_error, o.max_row_error);
    rows += o.rows;
  }
};

struct MultiHeadAttention {
  int heads = 1;
  Linear q, k, v, o;

  static MultiHeadAttention make(ParamStore& store, const std::string& name, int embed, int heads) {
    if (heads <= 0 || embed % heads != 0) throw StructuralError("embed must be divisible by heads");
    return {heads, Linear::make(store, name + ".q", embed, embed), Linear::make(store, name + ".k", embed, embed),
            Linear::make(store, name + ".v", embed, embed), Linear::make(store, name + ".o", embed, embed)};
  }
};

/// Scaled dot-product attention over already-projected Q, K, V, split into
/// heads along columns. `weights`, when given, receives heads x Lq x Lk.
inline Matrix scaled_dot_product_attention(const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                                           AttentionTrace* trace = nullptr, std::vector<double>* weights = nullptr) {
  if (q.cols != k.cols || k.cols != v.cols || k.rows != v.rows) throw StructuralError("attention: shape mismatch");
  if (heads <= 0 || q.cols % heads != 0) throw StructuralError("attention: embed must be divisible by heads");
  if (k.rows == 0) throw StructuralError("attention: no keys");
  const int dh = q.cols / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out(q.rows, q.cols);
  std::vector<double> p(static_cast<std::size_t>(k.rows));
  if (weights) weights->assign(static_cast<std::size_t>(heads) * q.rows * k.rows, 0.0);
  for (int h = 0; h < heads; ++h) {
    const int c0 = h * dh;
    for (int i = 0; i < q.rows; ++i) {
      const double* qi = q.data.data() + static_cast<std::size_t>(i) * q.cols + c0;
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < k.rows; ++j) {
        const double* kj = k.data.data() + static_cast<std::size_t>(j) * k.cols + c0;
        p[j] = detail::dot(qi, kj, dh) * scale;
        mx = std::max(mx, p[j]);
      }
      double z = 0;
      for (int j = 0; j < k.rows; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      double row_sum = 0;
      for (int j = 0; j < k.rows; ++j) {
        p[j] /= z;
        row_sum += p[j];
      }
      if (trace) {
        trace->max_row_error = std::max(trace->max_row_error, std::abs(row_sum - 1.0));
        ++trace->rows;
      }
      if (weights) std::copy(p.begin(), p.end(), weights->begin() + (static_cast<std::ptrdiff_t>(h) * q.rows + i) * k.rows);
      double* oi = out.data.data() + static_cast<std::size_t>(i) * out.cols + c0;
      for (int j = 0; j < k.rows; ++j) {
        const double* vj = v.data.data() + static_cast<std::size_t>(j) * v.cols + c0;
        for (int d = 0; d < dh; ++d) oi[d] += p[j] * vj[d];
      }
    }
  }
  return out;
}

/// Projections + attention + output projection; no residual, no norm.
inline Matrix multi_head_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                                   const MultiHeadAttention& mha, AttentionTrace* trace = nullptr) {
  return mha.o.forward(scaled_dot_product_attention(mha.q.forward(queries), mha.k.forward(keys),
                                                    mha.v.forward(values), mha.heads, trace));
}

/// Pre-norm attention sublayer: queries + MHA(LN(queries), LN(keys), LN(values)).
/// Without `norm_kv` the query norm is shared, as in self-attention.
struct AttentionLayer {
  LayerNorm norm_q;
  std::optional<LayerNorm> norm_kv;
  MultiHeadAttention mha;

  static AttentionLayer make_self(ParamStore& store, const std::string& name, int embed, int heads) {
    return {LayerNorm::make(store, name + ".norm", embed), std::nullopt,
            MultiHeadAttention::make(store, name + ".attn", embed, heads)};
  }

  static AttentionLayer make_cross(ParamStore& store, const std::string& name, int embed, int heads) {
    return {LayerNorm::make(store, name + ".norm_q", embed), LayerNorm::make(store, name + ".norm_kv", embed),
            MultiHeadAttention::make(store, name + ".attn", embed, heads)};
  }
};

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw StructuralError("add: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

inline Matrix attention_layer(const Matrix& queries, const Matrix& keys, const Matrix& values, const AttentionLayer& p,
                              AttentionTrace* trace = nullptr) {
  const LayerNorm& kv_norm = p.norm_kv ? *p.norm_kv : p.norm_q;
  const Matrix nq = p.norm_q.forward(queries);
  const Matrix nk = kv_norm.forward(keys);
  const Matrix nv = &keys == &values ? nk : kv_norm.forward(values);
  return add(queries, multi_head_attention(nq, nk, nv, p.mha, trace));
}

struct FeedForward {
  LayerNorm norm;
  Linear up;
  Linear down;

  static FeedForward make(ParamStore& store, const std::string& name, int embed, int hidden) {
    return {LayerNorm::make(store, name + ".norm", embed), Linear::make(store, name + ".up", embed, hidden),
            Linear::make(store, name + ".down", hidden, embed)};
  }

  Matrix forward(const Matrix& x) const {
    Matrix h = up.forward(norm.forward(x));
    for (auto& v : h.data) v = std::max(0.0, v);
    return add(x, down.forward(h));
  }
};

struct EncoderLayer {
  AttentionLayer self_attn;
  FeedForward ff;

  static EncoderLayer make(ParamStore& store, const std::string& name, int embed, int heads) {
    return {AttentionLayer::make_self(store, name + ".self", embed, heads), FeedForward::make(store, name + ".ff", embed, 2 * embed)};
  }

  Matrix forward(const Matrix& x, AttentionTrace* trace = nullptr) const {
    return ff.forward(attention_layer(x, x, x, self_attn, trace));
  }
};

struct DecoderLayer {
  AttentionLayer self_attn;
  AttentionLayer cross_attn;
  FeedForward ff;

  static DecoderLayer make(ParamStore& store, const std::string& name, int embed, int heads) {
    return {AttentionLayer::make_self(store, name + ".self", embed, heads),
            AttentionLayer::make_cross(store, name + ".cross", embed, heads),
            FeedForward::make(store, name + ".ff", embed, 2 * embed)};
  }

  Matrix forward(const Matrix& queries, const Matrix& memory, AttentionTrace* trace = nullptr) const {
    Matrix x = attention_layer(queries, queries, queries, self_attn, trace);
    x = attention_layer(x, memory, memory, cross_attn, trace);
    return ff.forward(x);
  }
};

}  // namespace lfp
