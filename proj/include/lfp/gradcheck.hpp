#pragma once

// Central finite-difference checks of every loss's analytic gradient.

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lfp/losses.hpp"

namespace lfp {

struct GradCheckOptions {
  int points = 100;
  double step = 1e-5;
  std::uint64_t seed = 0;
  LossConfig loss;
  // Test hook: analytic gradients are multiplied by (1 + corrupt).
  double corrupt = 0.0;
  // Coordinates whose analytic and numeric derivatives are both below this
  // are compared in absolute terms (roundoff dominates there).
  double denom_floor = 1e-6;
};

struct GradCheckResult {
  std::string loss;
  double max_rel_err = 0.0;
  int points = 0;
  int resampled = 0;
};

inline const std::vector<std::string>& gradcheck_loss_names() {
  static const std::vector<std::string> names = {"roi", "edg", "int", "dir", "occ", "plan", "spd", "sig"};
  return names;
}

namespace detail {

/// A sampled differentiable problem: f(x, grad) returns the loss and, when
/// grad is non-empty, fills the analytic gradient.
struct GradProblem {
  std::vector<double> x;
  std::function<double(std::span<const double>, std::span<double>)> f;
};

inline DoubleEdgeSet random_ground_truth(Rng& rng, int n_gt, int n_p) {
  DoubleEdgeSet gt;
  gt.n_d = n_gt;
  gt.n_p = n_p;
  for (int i = 0; i < n_gt; ++i) {
    DoubleEdgeLane lane;
    lane.intersection = static_cast<int>(rng.below(2));
    lane.direction = static_cast<int>(rng.below(2));
    for (int p = 0; p < n_p; ++p) {
      EdgePoint e{{rng.uniform(0, 40), rng.uniform(-10, 10), rng.uniform(-0.5, 0.5)},
                  static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2))};
      (p < n_p / 2 ? lane.left : lane.right).push_back(e);
    }
    gt.lanes.push_back(std::move(lane));
  }
  return gt;
}

inline LaneROI roi_from_flat(std::span<const double> x, int n_d, int n_p) {
  LaneROI r(n_d, n_p);
  for (std::size_t k = 0; k < r.points.size(); ++k) r.points[k] = {x[3 * k], x[3 * k + 1], x[3 * k + 2]};
  return r;
}

/// Draws one problem for `name`; nullopt when the draw sits too close to a
/// kink of the loss and must be resampled.
inline std::optional<GradProblem> sample_problem(const std::string& name, Rng& rng, const GradCheckOptions& opt) {
  const double kink_margin = 100.0 * opt.step;
  const LossConfig cfg = opt.loss;
  if (name == "roi" || name == "edg") {
    const int n_d = 3, n_p = 4, n_gt = 2;
    auto gt = random_ground_truth(rng, n_gt, n_p);
    std::vector<double> x(3 * static_cast<std::size_t>(n_d) * n_p);
    for (auto& v : x) v = rng.uniform(-10, 40);
    for (int i = 0; i < n_gt; ++i) {
      for (int p = 0; p < n_p; ++p) {
        const Vec3 g = gt_point(gt, i, p).position;
        const std::size_t k = 3 * (static_cast<std::size_t>(i) * n_p + p);
        if (std::abs(x[k] - g.x) < kink_margin || std::abs(x[k + 1] - g.y) < kink_margin ||
            std::abs(x[k + 2] - g.z) < kink_margin) {
          return std::nullopt;
        }
      }
    }
    const bool roi = name == "roi";
    return GradProblem{std::move(x), [gt, n_d, n_p, roi](std::span<const double> v, std::span<double> g) {
                         const auto r = roi_from_flat(v, n_d, n_p);
                         return roi ? loss_roi(r, gt, g) : loss_edge(r, gt, g);
                       }};
  }
  if (name == "int" || name == "dir" || name == "occ") {
    const int n = name == "occ" ? 12 : 1 + static_cast<int>(rng.below(6));
    std::vector<int> t(static_cast<std::size_t>(n));
    for (auto& v : t) v = static_cast<int>(rng.below(2));
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = rng.uniform(-4, 4);
    return GradProblem{std::move(x), [t, cfg](std::span<const double> v, std::span<double> g) {
                         return focal_loss(v, t, cfg, g);
                       }};
  }
  if (name == "plan") {
    const int n_d = 3, n_p = 4;
    auto gt = random_ground_truth(rng, 2, n_p);
    const Vec3 target{rng.uniform(0, 50), rng.uniform(-5, 5), 0.0};
    std::vector<double> x(static_cast<std::size_t>(n_d) * n_p);
    for (auto& v : x) v = rng.uniform(-4, 4);
    return GradProblem{std::move(x), [gt, target, cfg](std::span<const double> v, std::span<double> g) {
                         return loss_plan(v, gt, target, cfg, g);
                       }};
  }
  if (name == "spd") {
    const double gt = rng.uniform(0, 10);
    const double pred = gt + rng.uniform(-3, 3);
    if (std::abs(std::abs(pred - gt) - 1.0) < kink_margin) return std::nullopt;
    return GradProblem{{pred}, [gt](std::span<const double> v, std::span<double> g) {
                         double d = 0;
                         const double l = smooth_l1(v[0], gt, g.empty() ? nullptr : &d);
                         if (!g.empty()) g[0] = d;
                         return l;
                       }};
  }
  if (name == "sig") {
    const int cls = static_cast<int>(rng.below(kSignalClasses));
    std::vector<double> x(kSignalClasses);
    for (auto& v : x) v = rng.uniform(-4, 4);
    return GradProblem{std::move(x), [cls](std::span<const double> v, std::span<double> g) {
                         return cross_entropy(v, cls, g);
                       }};
  }
  throw std::invalid_argument("unknown loss '" + name + "'");
}

}  // namespace detail

/// Max relative error between analytic and central-difference derivatives
/// over every coordinate of `opt.points` randomized inputs.
inline GradCheckResult grad_check(const std::string& name, const GradCheckOptions& opt = {}) {
  if (!(opt.step > 0)) throw std::invalid_argument("grad_check: step must be > 0");
  Rng rng(derive_seed(opt.seed, "gradcheck." + name));
  GradCheckResult res{name, 0.0, 0, 0};
  while (res.points < opt.points) {
    auto prob = detail::sample_problem(name, rng, opt);
    if (!prob) {
      ++res.resampled;
      if (res.resampled > 100 * opt.points) throw std::runtime_error("grad_check: could not sample a smooth point for " + name);
      continue;
    }
    std::vector<double> analytic(prob->x.size());
    prob->f(prob->x, analytic);
    std::vector<double> x = prob->x;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double x0 = x[k];
      x[k] = x0 + opt.step;
      const double up = prob->f(x, {});
      x[k] = x0 - opt.step;
      const double down = prob->f(x, {});
      x[k] = x0;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[k] * (1.0 + opt.corrupt);
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.denom_floor});
      res.max_rel_err = std::max(res.max_rel_err, std::abs(a - numeric) / denom);
    }
    ++res.points;
  }
  return res;
}

inline constexpr const char* kGradCheckHeader = "loss_name,max_rel_err";

inline void write_gradcheck_row(std::ostream& os, const GradCheckResult& r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", r.max_rel_err);
  os << r.loss << ',' << buf << '\n';
}

}  // namespace lfp
