#pragma once

// LiDAR encodings: dense voxels, height-adjusted pillars, lane-guided sparse
// pillar sampling, and the lane-level pillar encoder.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <ostream>
#include <string>
#include <vector>

#include "lfp/common.hpp"
#include "lfp/nn.hpp"
#include "lfp/scene.hpp"

namespace lfp {

struct GridSpec {
  Vec3 resolution{0.5, 0.5, 0.5};
  Vec3 lo{-20.0, -40.0, -2.0};
  Vec3 hi{80.0, 40.0, 6.0};

  static GridSpec voxel() { return {}; }
  static GridSpec pillar() { return {{0.5, 0.5, 8.0}, {-20.0, -40.0, -2.0}, {80.0, 40.0, 6.0}}; }

  bool inside(const Vec3& p) const {
    return p.x >= lo.x && p.x < hi.x && p.y >= lo.y && p.y < hi.y && p.z >= lo.z && p.z < hi.z;
  }
  int ix(double x) const { return static_cast<int>(std::floor((x - lo.x) / resolution.x)); }
  int iy(double y) const { return static_cast<int>(std::floor((y - lo.y) / resolution.y)); }
  int iz(double z) const { return static_cast<int>(std::floor((z - lo.z) / resolution.z)); }
  double center_x(int i) const { return lo.x + (i + 0.5) * resolution.x; }
  double center_y(int i) const { return lo.y + (i + 0.5) * resolution.y; }
};

inline std::vector<std::string> validate(const GridSpec& g) {
  std::vector<std::string> out;
  if (!(g.resolution.x > 0 && g.resolution.y > 0 && g.resolution.z > 0)) out.push_back("grid resolution must be > 0");
  if (!(g.hi.x > g.lo.x && g.hi.y > g.lo.y && g.hi.z > g.lo.z)) out.push_back("grid bounds degenerate");
  return out;
}

inline void require_valid(const GridSpec& g) {
  if (auto d = validate(g); !d.empty()) throw ValidationError(std::move(d));
}

// ---------------------------------------------------------------------------
// Voxels

using VoxelKey = std::array<int, 3>;

struct VoxelCell {
  std::size_t count = 0;
  Vec3 centroid;
};

struct VoxelSet {
  std::map<VoxelKey, VoxelCell> cells;
  std::size_t count() const { return cells.size(); }
};

/// Occupied cells of a 3-D grid; points outside the bounds are dropped.
inline VoxelSet voxelize(const PointCloud& cloud, const GridSpec& spec) {
  require_valid(spec);
  VoxelSet out;
  for (const auto& p : cloud.points) {
    if (!spec.inside(p)) continue;
    auto& cell = out.cells[{spec.ix(p.x), spec.iy(p.y), spec.iz(p.z)}];
    ++cell.count;
    cell.centroid = cell.centroid + p;
  }
  for (auto& [_, cell] : out.cells) cell.centroid = (1.0 / static_cast<double>(cell.count)) * cell.centroid;
  return out;
}

// ---------------------------------------------------------------------------
// Pillars

struct PillarKey {
  int ix = 0;
  int iy = 0;
  friend auto operator<=>(const PillarKey&, const PillarKey&) = default;
};

/// count, centroid xyz, z-min, z-max, centroid offset xy from the cell
/// center, and a reserved channel that is always 0.
inline constexpr int kRawPillarFeatures = 9;
using RawPillar = std::array<double, kRawPillarFeatures>;
enum RawPillarChannel { kCount = 0, kCentroidX, kCentroidY, kCentroidZ, kZMin, kZMax, kOffsetX, kOffsetY, kReserved };

struct Pillar {
  std::vector<std::size_t> members;
  RawPillar raw{};
};

struct PillarSet {
  GridSpec grid;
  std::map<PillarKey, Pillar> cells;

  std::size_t count() const { return cells.size(); }
  Vec3 center(const PillarKey& k) const { return {grid.center_x(k.ix), grid.center_y(k.iy), 0.0}; }
};

/// One pillar per occupied (ix, iy) column; the z-extent follows the member
/// points instead of the grid's z-range.
inline PillarSet pillarize(const PointCloud& cloud, const GridSpec& spec) {
  require_valid(spec);
  if (spec.resolution.z < spec.hi.z - spec.lo.z) {
    throw std::invalid_argument("pillarize: dz must span the whole z-range (single z bin)");
  }
  PillarSet out;
  out.grid = spec;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    if (!spec.inside(p)) continue;
    out.cells[{spec.ix(p.x), spec.iy(p.y)}].members.push_back(i);
  }
  for (auto& [key, pillar] : out.cells) {
    Vec3 sum;
    double zmin = std::numeric_limits<double>::infinity(), zmax = -zmin;
    for (std::size_t m : pillar.members) {
      const auto& p = cloud.points[m];
      sum = sum + p;
      zmin = std::min(zmin, p.z);
      zmax = std::max(zmax, p.z);
    }
    const double n = static_cast<double>(pillar.members.size());
    const Vec3 c = (1.0 / n) * sum;
    const Vec3 center = out.center(key);
    pillar.raw = {n, c.x, c.y, c.z, zmin, zmax, c.x - center.x, c.y - center.y, 0.0};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lane-level sampling

/// n_d x n_p boundary points; index p < n_p/2 is the left edge, the rest the right edge.
struct LaneROI {
  int n_d = 0;
  int n_p = 0;
  std::vector<Vec3> points;

  LaneROI() = default;
  LaneROI(int lanes, int pts) : n_d(lanes), n_p(pts), points(static_cast<std::size_t>(lanes) * pts) {}

  Vec3& at(int i, int p) { return points[static_cast<std::size_t>(i) * n_p + p]; }
  const Vec3& at(int i, int p) const { return points[static_cast<std::size_t>(i) * n_p + p]; }
  friend bool operator==(const LaneROI&, const LaneROI&) = default;
};

struct LaneWeights {
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  double operator[](std::size_t i) const { return weights[i]; }
  bool valid() const {
    return std::all_of(weights.begin(), weights.end(), [](double w) { return w >= 0.0 && w <= 1.0; });
  }
};

struct LanePillar {
  RawPillar raw{};
  bool empty = true;
  std::optional<PillarKey> cell;
};

struct LanePillarSet {
  int n_d = 0;
  int n_p = 0;
  std::vector<LanePillar> entries;

  const LanePillar& at(int i, int p) const { return entries[static_cast<std::size_t>(i) * n_p + p]; }
  std::size_t size() const { return entries.size(); }
};

/// For every ROI point, the pillar whose cell center is nearest in (x, y);
/// ties go to the lexicographically smaller (ix, iy). Nothing within r_max
/// yields an empty, all-zero entry.
inline LanePillarSet lane_sample(const PillarSet& pillars, const LaneROI& roi, double r_max, int jobs = 1) {
  if (!(r_max > 0)) throw std::invalid_argument("lane_sample: r_max must be > 0");
  LanePillarSet out;
  out.n_d = roi.n_d;
  out.n_p = roi.n_p;
  out.entries.resize(roi.points.size());
  const auto& g = pillars.grid;
  parallel_for(static_cast<std::size_t>(roi.n_d), jobs, [&](std::size_t lane) {
    for (int p = 0; p < roi.n_p; ++p) {
      const Vec3& q = roi.at(static_cast<int>(lane), p);
      auto& entry = out.entries[lane * static_cast<std::size_t>(roi.n_p) + p];
      if (!q.finite() || pillars.cells.empty()) continue;
      // Candidate cells lie in the index box covering the r_max disc.
      const double x0 = std::max(q.x - r_max, g.lo.x - g.resolution.x);
      const double x1 = std::min(q.x + r_max, g.hi.x + g.resolution.x);
      const double y0 = std::max(q.y - r_max, g.lo.y - g.resolution.y);
      const double y1 = std::min(q.y + r_max, g.hi.y + g.resolution.y);
      if (x0 > x1 || y0 > y1) continue;
      double best = std::numeric_limits<double>::infinity();
      const Pillar* chosen = nullptr;
      PillarKey chosen_key;
      for (int ix = g.ix(x0); ix <= g.ix(x1); ++ix) {
        for (int iy = g.iy(y0); iy <= g.iy(y1); ++iy) {
          const auto it = pillars.cells.find({ix, iy});
          if (it == pillars.cells.end()) continue;
          const double dx = g.center_x(ix) - q.x, dy = g.center_y(iy) - q.y;
          const double d2 = dx * dx + dy * dy;
          if (d2 < best) {
            best = d2;
            chosen = &it->second;
            chosen_key = it->first;
          }
        }
      }
      if (chosen && std::sqrt(best) <= r_max) {
        entry.raw = chosen->raw;
        entry.empty = false;
        entry.cell = chosen_key;
      }
    }
  });
  return out;
}

/// Per-pillar affine map + ReLU from the raw layout to `out` channels.
struct PillarEncoder {
  Linear proj;

  static PillarEncoder make(ParamStore& store, const std::string& name, int channels) {
    return {Linear::make(store, name, kRawPillarFeatures, channels)};
  }

  int channels() const { return proj.out; }

  void encode(const RawPillar& raw, std::span<double> out) const {
    proj.apply(raw, out);
    for (auto& v : out) v = std::max(0.0, v);
  }
};

/// Lane pillar features f_lane (n_d x n_p x C); empty entries map to zero.
inline FeatureSet encode_pillars(const LanePillarSet& lane_pillars, const PillarEncoder& enc) {
  FeatureSet f(lane_pillars.n_d, lane_pillars.n_p, enc.channels());
  for (int i = 0; i < lane_pillars.n_d; ++i) {
    for (int p = 0; p < lane_pillars.n_p; ++p) {
      const auto& e = lane_pillars.at(i, p);
      if (!e.empty) enc.encode(e.raw, f.row(i, p));
    }
  }
  return f;
}

/// Dense variant: every pillar in the set, in key order (pillar count x C).
inline Matrix encode_all_pillars(const PillarSet& pillars, const PillarEncoder& enc) {
  Matrix m(static_cast<int>(pillars.count()), enc.channels());
  int r = 0;
  for (const auto& [_, pillar] : pillars.cells) enc.encode(pillar.raw, m.row(r++));
  return m;
}

// ---------------------------------------------------------------------------
// Feature counts

struct FeatureCounts {
  std::size_t voxel = 0;
  std::size_t pillar = 0;
  std::size_t lane_level = 0;

  double ratio_voxel() const { return lane_level ? static_cast<double>(voxel) / lane_level : 0.0; }
  double ratio_pillar() const { return lane_level ? static_cast<double>(pillar) / lane_level : 0.0; }
};

/// lane_level counts feature slots (n_d * n_p), empty or not.
inline FeatureCounts feature_count_report(const PointCloud& cloud, const LaneROI& roi, const GridSpec& voxel_spec,
                                          const GridSpec& pillar_spec) {
  return {voxelize(cloud, voxel_spec).count(), pillarize(cloud, pillar_spec).count(),
          static_cast<std::size_t>(roi.n_d) * static_cast<std::size_t>(roi.n_p)};
}

inline constexpr const char* kFeatureCountHeader = "scene_id,voxel_count,pillar_count,lane_level_count,ratio_voxel,ratio_pillar";

inline void write_feature_count_row(std::ostream& os, const std::string& scene_id, const FeatureCounts& c) {
  char buf[64];
  os << scene_id << ',' << c.voxel << ',' << c.pillar << ',' << c.lane_level << ',';
  std::snprintf(buf, sizeof buf, "%.4f,%.4f", c.ratio_voxel(), c.ratio_pillar());
  os << buf << '\n';
}

}  // namespace lfp
