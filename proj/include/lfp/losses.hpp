#pragma once

// Training losses as pure functions of predictions and ground truth. Each
// loss optionally writes its analytic gradient with respect to its prediction
// input; for point inputs the layout is (x, y, z) per LaneROI entry.
//
// Prediction slot i pairs with ground-truth lane i; slots past the
// ground-truth lane count are unsupervised and get zero gradient.

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfp/double_edge.hpp"
#include "lfp/heads.hpp"
#include "lfp/pillar.hpp"

namespace lfp {

struct LossConfig {
  double rho = 0.25;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double d_p2t_floor = 0.1;
};

inline std::vector<std::string> validate(const LossConfig& c) {
  std::vector<std::string> out;
  if (!(c.rho >= 0)) out.push_back("rho must be >= 0");
  if (!(c.focal_gamma >= 0)) out.push_back("focal_gamma must be >= 0");
  if (!(c.focal_alpha >= 0 && c.focal_alpha <= 1)) out.push_back("focal_alpha must lie in [0, 1]");
  if (!(c.d_p2t_floor > 0)) out.push_back("d_p2t_floor must be > 0");
  return out;
}

struct LossWeights {
  double gamma = 3.0;       // roi
  double delta = 2.0;       // int
  double epsilon = 1.0;     // dir
  double varepsilon = 3.0;  // occ
  double zeta = 4.0;        // plan
  double eta = 5.0;         // edg
  double theta = 1.0;       // spd
  double iota = 0.1;        // sig
};

inline std::vector<std::string> validate(const LossWeights& w) {
  std::vector<std::string> out;
  for (double v : {w.gamma, w.delta, w.epsilon, w.varepsilon, w.zeta, w.eta, w.theta, w.iota}) {
    if (!(v >= 0)) {
      out.push_back("loss weights must be >= 0");
      break;
    }
  }
  return out;
}

struct LossBreakdown {
  double roi = 0, edg = 0, int_ = 0, dir = 0, occ = 0, plan = 0, spd = 0, sig = 0;
  double total = 0;
};

inline LossBreakdown total_loss(LossBreakdown b, const LossWeights& w = {}) {
  b.total = w.gamma * b.roi + w.delta * b.int_ + w.epsilon * b.dir + w.varepsilon * b.occ + w.zeta * b.plan +
            w.eta * b.edg + w.theta * b.spd + w.iota * b.sig;
  return b;
}

namespace detail {

inline void check_assignment(const LaneROI& pred, const DoubleEdgeSet& gt, const char* who) {
  if (pred.n_p != gt.n_p) throw StructuralError(std::string(who) + ": n_p differs between prediction and ground truth");
  if (static_cast<int>(gt.lanes.size()) > pred.n_d) {
    throw StructuralError(std::string(who) + ": more ground-truth lanes than prediction slots");
  }
  const std::size_t half = static_cast<std::size_t>(gt.n_p / 2);
  for (const auto& lane : gt.lanes) {
    if (lane.left.size() != half || lane.right.size() != half) throw StructuralError(std::string(who) + ": edge length mismatch");
  }
}

inline const EdgePoint& gt_point(const DoubleEdgeSet& gt, int i, int p) {
  const int half = gt.n_p / 2;
  return p < half ? gt.lanes[i].left[p] : gt.lanes[i].right[p - half];
}

inline double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

/// Sum of |pred - gt| over supervised points; scale multiplies value and gradient.
inline double manhattan_sum(const LaneROI& pred, const DoubleEdgeSet& gt, double scale, std::span<double> grad) {
  if (!grad.empty()) {
    if (grad.size() != 3 * pred.points.size()) throw StructuralError("gradient buffer has the wrong size");
    std::fill(grad.begin(), grad.end(), 0.0);
  }
  double sum = 0;
  for (int i = 0; i < static_cast<int>(gt.lanes.size()); ++i) {
    for (int p = 0; p < pred.n_p; ++p) {
      const Vec3 d = pred.at(i, p) - gt_point(gt, i, p).position;
      sum += d.manhattan();
      if (!grad.empty()) {
        const std::size_t k = 3 * (static_cast<std::size_t>(i) * pred.n_p + p);
        grad[k] = scale * sign(d.x);
        grad[k + 1] = scale * sign(d.y);
        grad[k + 2] = scale * sign(d.z);
      }
    }
  }
  return scale * sum;
}

}  // namespace detail

/// Mean over ground-truth lanes of the summed left+right Manhattan residuals.
inline double loss_roi(const LaneROI& pred, const DoubleEdgeSet& gt, std::span<double> grad = {}) {
  detail::check_assignment(pred, gt, "loss_roi");
  const double n_gt = static_cast<double>(gt.lanes.size());
  if (n_gt == 0) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return 0.0;
  }
  return detail::manhattan_sum(pred, gt, 1.0 / n_gt, grad);
}

/// Mean Manhattan distance per supervised edge point.
inline double loss_edge(const LaneROI& pred, const DoubleEdgeSet& gt, std::span<double> grad = {}) {
  detail::check_assignment(pred, gt, "loss_edge");
  const double n = static_cast<double>(gt.lanes.size()) * gt.n_p;
  if (n == 0) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return 0.0;
  }
  return detail::manhattan_sum(pred, gt, 1.0 / n, grad);
}

/// Mean binary focal loss over elements. Targets must be 0 or 1.
inline double focal_loss(std::span<const double> logits, std::span<const int> targets, const LossConfig& cfg = {},
                         std::span<double> grad = {}) {
  if (logits.size() != targets.size()) throw StructuralError("focal_loss: logits and targets differ in length");
  if (!grad.empty() && grad.size() != logits.size()) throw StructuralError("focal_loss: gradient buffer has the wrong size");
  if (logits.empty()) return 0.0;
  const double n = static_cast<double>(logits.size());
  double sum = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (!is_flag(targets[k])) throw std::invalid_argument("focal_loss: targets must be 0 or 1");
    const double s = targets[k] ? 1.0 : -1.0;
    const double zt = s * logits[k];
    const double alpha = targets[k] ? cfg.focal_alpha : 1.0 - cfg.focal_alpha;
    const double pt = logistic(zt);
    const double q = logistic(-zt);
    const double nll = softplus(-zt);  // -log p_t
    const double mod = std::pow(q, cfg.focal_gamma);
    sum += alpha * mod * nll;
    if (!grad.empty()) grad[k] = s * alpha * mod * (-cfg.focal_gamma * pt * nll - q) / n;
  }
  return sum / n;
}

inline double smooth_l1(double pred, double gt, double* grad = nullptr) {
  const double d = pred - gt;
  if (std::abs(d) < 1.0) {
    if (grad) *grad = d;
    return 0.5 * d * d;
  }
  if (grad) *grad = detail::sign(d);
  return std::abs(d) - 0.5;
}

inline double cross_entropy(std::span<const double> logits, int gt_class, std::span<double> grad = {}) {
  if (gt_class < 0 || gt_class >= static_cast<int>(logits.size())) {
    throw std::out_of_range("cross_entropy: class " + std::to_string(gt_class) + " out of range");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z);
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  const double lse = mx + std::log(z);
  if (!grad.empty()) {
    if (grad.size() != logits.size()) throw StructuralError("cross_entropy: gradient buffer has the wrong size");
    for (std::size_t k = 0; k < logits.size(); ++k) {
      grad[k] = std::exp(logits[k] - lse) - (static_cast<int>(k) == gt_class ? 1.0 : 0.0);
    }
  }
  return lse - logits[static_cast<std::size_t>(gt_class)];
}

/// Binary cross-entropy of a logit against a 0/1 target, and its derivative.
inline double bce_logit(double z, int t, double* dz = nullptr) {
  if (dz) *dz = logistic(z) - t;
  return softplus(t ? -z : z);
}

/// (rho (1 - e^-c))^2 c and its derivative in c.
inline double plan_modulation(double c, double rho, double* dc = nullptr) {
  const double e = std::exp(-c);
  const double m = 1.0 - e;
  if (dc) *dc = rho * rho * (2.0 * m * e * c + m * m);
  return rho * rho * m * m * c;
}

/// Distance-weighted plan loss. Each index contributes the mean of its left
/// and right edge terms; `target` is in the same frame as the ground truth.
inline double loss_plan(std::span<const double> plan_logits, const DoubleEdgeSet& gt, const Vec3& target,
                        const LossConfig& cfg = {}, std::span<double> grad = {}) {
  if (!target.finite()) throw std::invalid_argument("loss_plan: target point must be finite");
  const int n_p = gt.n_p, half = n_p / 2;
  if (plan_logits.size() % static_cast<std::size_t>(std::max(1, n_p)) != 0 ||
      plan_logits.size() / std::max(1, n_p) < gt.lanes.size()) {
    throw StructuralError("loss_plan: plan logits do not cover the ground-truth lanes");
  }
  if (!grad.empty()) {
    if (grad.size() != plan_logits.size()) throw StructuralError("loss_plan: gradient buffer has the wrong size");
    std::fill(grad.begin(), grad.end(), 0.0);
  }
  double sum = 0;
  for (std::size_t i = 0; i < gt.lanes.size(); ++i) {
    const auto& lane = gt.lanes[i];
    if (static_cast<int>(lane.left.size()) != half || static_cast<int>(lane.right.size()) != half) {
      throw StructuralError("loss_plan: edge length mismatch");
    }
    for (int p = 0; p < n_p; ++p) {
      const EdgePoint& e = p < half ? lane.left[p] : lane.right[p - half];
      const std::size_t k = i * n_p + p;
      const double dist = std::max((e.position - target).norm(), cfg.d_p2t_floor);
      double dce = 0, df = 0;
      const double ce = bce_logit(plan_logits[k], e.plan, grad.empty() ? nullptr : &dce);
      const double term = plan_modulation(ce, cfg.rho, grad.empty() ? nullptr : &df) / dist;
      sum += 0.5 * term;
      if (!grad.empty()) grad[k] = 0.5 * df * dce / dist;
    }
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Per-head target extraction

inline std::vector<int> lane_targets(const DoubleEdgeSet& gt, bool intersection) {
  std::vector<int> t;
  for (const auto& lane : gt.lanes) t.push_back(intersection ? lane.intersection : lane.direction);
  return t;
}

inline std::vector<int> occupancy_targets(const DoubleEdgeSet& gt) {
  std::vector<int> t;
  for (int i = 0; i < static_cast<int>(gt.lanes.size()); ++i) {
    for (int p = 0; p < gt.n_p; ++p) t.push_back(detail::gt_point(gt, i, p).occ);
  }
  return t;
}

struct LossTargets {
  DoubleEdgeSet gt;
  Vec3 target;  // route target point, same frame as gt
  double speed = 0;
  SignalState signal = SignalState::none;
};

/// Every component loss for one frame, combined with `weights`.
inline LossBreakdown compute_losses(const Predictions& pred, const LaneROI& roi, const LossTargets& t,
                                    const LossConfig& cfg = {}, const LossWeights& weights = {}) {
  LossBreakdown b;
  const auto& gt = t.gt;
  detail::check_assignment(pred.points, gt, "compute_losses");
  const std::size_t n_gt = gt.lanes.size();
  b.roi = loss_roi(roi, gt);
  b.edg = loss_edge(pred.points, gt);
  b.int_ = focal_loss(std::span(pred.int_logits).first(n_gt), lane_targets(gt, true), cfg);
  b.dir = focal_loss(std::span(pred.dir_logits).first(n_gt), lane_targets(gt, false), cfg);
  b.occ = focal_loss(std::span(pred.occ_logits).first(n_gt * gt.n_p), occupancy_targets(gt), cfg);
  b.plan = loss_plan(pred.plan_logits, gt, t.target, cfg);
  b.spd = smooth_l1(pred.speed, t.speed);
  b.sig = cross_entropy(pred.signal_logits, signal_class(t.signal));
  return total_loss(b, weights);
}

}  // namespace lfp
