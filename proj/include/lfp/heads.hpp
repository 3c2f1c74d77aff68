#pragma once

// Prediction heads over the enhanced lane features, and conversion of their
// outputs into a double-edge lane set.

#include <array>
#include <string>
#include <vector>

#include "lfp/double_edge.hpp"
#include "lfp/nn.hpp"
#include "lfp/pillar.hpp"
#include "lfp/scene.hpp"

namespace lfp {

struct Predictions {
  LaneROI points;                  // n_d x n_p, p < n_p/2 on the left edge
  std::vector<double> int_logits;  // n_d
  std::vector<double> dir_logits;  // n_d
  std::vector<double> occ_logits;  // n_d * n_p, same indexing as points
  std::vector<double> plan_logits; // n_d * n_p
  double speed = 0.0;
  std::array<double, kSignalClasses> signal_logits{};

  int n_d() const { return points.n_d; }
  int n_p() const { return points.n_p; }

  friend bool operator==(const Predictions&, const Predictions&) = default;
};

struct HeadParams {
  Linear points;  // E -> 3, per entry
  Linear occ;     // E -> 1, per entry
  Linear plan;    // E -> 1, per entry
  Linear intersection;  // E -> 1, lane mean
  Linear direction;     // E -> 1, lane mean
  Linear speed;   // E -> 1, global mean
  Linear signal;  // E -> classes, global mean

  static HeadParams make(ParamStore& store, const std::string& name, int embed) {
    return {Linear::make(store, name + ".points", embed, 3),       Linear::make(store, name + ".occ", embed, 1),
            Linear::make(store, name + ".plan", embed, 1),         Linear::make(store, name + ".int", embed, 1),
            Linear::make(store, name + ".dir", embed, 1),          Linear::make(store, name + ".speed", embed, 1),
            Linear::make(store, name + ".signal", embed, kSignalClasses)};
  }
};

inline Predictions heads_forward(const FeatureSet& f, const HeadParams& h) {
  if (f.dim != h.points.in) throw StructuralError("heads_forward: embed mismatch");
  Predictions out;
  out.points = LaneROI(f.n_d, f.n_p);
  const std::size_t entries = static_cast<std::size_t>(f.n_d) * f.n_p;
  out.occ_logits.resize(entries);
  out.plan_logits.resize(entries);
  out.int_logits.resize(static_cast<std::size_t>(f.n_d));
  out.dir_logits.resize(static_cast<std::size_t>(f.n_d));

  std::vector<double> global(static_cast<std::size_t>(f.dim), 0.0);
  std::vector<double> lane_mean(static_cast<std::size_t>(f.dim));
  double y3[3];
  double y1[1];
  for (int i = 0; i < f.n_d; ++i) {
    std::fill(lane_mean.begin(), lane_mean.end(), 0.0);
    for (int p = 0; p < f.n_p; ++p) {
      const auto x = f.row(i, p);
      const std::size_t k = static_cast<std::size_t>(i) * f.n_p + p;
      h.points.apply(x, y3);
      out.points.at(i, p) = {y3[0], y3[1], y3[2]};
      h.occ.apply(x, y1);
      out.occ_logits[k] = y1[0];
      h.plan.apply(x, y1);
      out.plan_logits[k] = y1[0];
      for (int c = 0; c < f.dim; ++c) lane_mean[c] += x[c];
    }
    for (int c = 0; c < f.dim; ++c) {
      global[c] += lane_mean[c];
      lane_mean[c] /= std::max(1, f.n_p);
    }
    h.intersection.apply(lane_mean, y1);
    out.int_logits[i] = y1[0];
    h.direction.apply(lane_mean, y1);
    out.dir_logits[i] = y1[0];
  }
  for (auto& v : global) v /= static_cast<double>(std::max<std::size_t>(1, entries));
  h.speed.apply(global, y1);
  out.speed = y1[0];
  h.signal.apply(global, out.signal_logits);
  return out;
}

/// Flags are logit > 0. The result always has n_d lanes.
inline DoubleEdgeSet to_double_edge(const Predictions& pred) {
  const int n_d = pred.n_d(), n_p = pred.n_p(), half = n_p / 2;
  DoubleEdgeSet set;
  set.n_d = n_d;
  set.n_p = n_p;
  for (int i = 0; i < n_d; ++i) {
    DoubleEdgeLane lane;
    lane.intersection = pred.int_logits[i] > 0 ? 1 : 0;
    lane.direction = pred.dir_logits[i] > 0 ? 1 : 0;
    for (int p = 0; p < n_p; ++p) {
      const std::size_t k = static_cast<std::size_t>(i) * n_p + p;
      EdgePoint e{pred.points.at(i, p), pred.occ_logits[k] > 0 ? 1 : 0, pred.plan_logits[k] > 0 ? 1 : 0};
      (p < half ? lane.left : lane.right).push_back(e);
    }
    set.lanes.push_back(std::move(lane));
  }
  return set;
}

/// Logit magnitude used when ground truth stands in for the network; large
/// enough that every classification loss evaluates to exactly zero.
inline constexpr double kSaturatedLogit = 1000.0;

/// Predictions that reproduce `gt` exactly. Slots past the ground-truth lanes
/// get zero points and negative flags.
inline Predictions predictions_from_ground_truth(const DoubleEdgeSet& gt, int n_d, double speed, SignalState signal) {
  if (static_cast<int>(gt.lanes.size()) > n_d) throw StructuralError("ground truth has more lanes than prediction slots");
  const int n_p = gt.n_p, half = n_p / 2;
  const double on = kSaturatedLogit, off = -kSaturatedLogit;
  Predictions out;
  out.points = LaneROI(n_d, n_p);
  out.int_logits.assign(static_cast<std::size_t>(n_d), off);
  out.dir_logits.assign(static_cast<std::size_t>(n_d), off);
  out.occ_logits.assign(static_cast<std::size_t>(n_d) * n_p, off);
  out.plan_logits.assign(static_cast<std::size_t>(n_d) * n_p, off);
  for (std::size_t i = 0; i < gt.lanes.size(); ++i) {
    const auto& lane = gt.lanes[i];
    if (static_cast<int>(lane.left.size()) != half || static_cast<int>(lane.right.size()) != half) {
      throw StructuralError("ground truth lane " + std::to_string(i) + " has the wrong point count");
    }
    out.int_logits[i] = lane.intersection ? on : off;
    out.dir_logits[i] = lane.direction ? on : off;
    for (int p = 0; p < n_p; ++p) {
      const EdgePoint& e = p < half ? lane.left[p] : lane.right[p - half];
      const std::size_t k = i * n_p + p;
      out.points.at(static_cast<int>(i), p) = e.position;
      out.occ_logits[k] = e.occ ? on : off;
      out.plan_logits[k] = e.plan ? on : off;
    }
  }
  out.speed = speed;
  out.signal_logits.fill(off);
  out.signal_logits[signal_class(signal)] = 0.0;
  return out;
}

/// Lane ROI that reproduces the ground-truth boundaries (surplus slots zero).
inline LaneROI roi_from_ground_truth(const DoubleEdgeSet& gt, int n_d) {
  LaneROI roi(n_d, gt.n_p);
  const int half = gt.n_p / 2;
  for (std::size_t i = 0; i < gt.lanes.size() && static_cast<int>(i) < n_d; ++i) {
    for (int p = 0; p < gt.n_p; ++p) {
      roi.at(static_cast<int>(i), p) = p < half ? gt.lanes[i].left[p].position : gt.lanes[i].right[p - half].position;
    }
  }
  return roi;
}

inline nlohmann::json to_json(const Predictions& p) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& v : p.points.points) points.push_back(vec3_to_json(v));
  return {{"n_d", p.n_d()},
          {"n_p", p.n_p()},
          {"points", points},
          {"int_logits", p.int_logits},
          {"dir_logits", p.dir_logits},
          {"occ_logits", p.occ_logits},
          {"plan_logits", p.plan_logits},
          {"speed", p.speed},
          {"signal_logits", p.signal_logits}};
}

}  // namespace lfp
