#pragma once

// Static SVG output: grouped bar charts and a top-down scene rendering.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "lfp/sim.hpp"

namespace lfp {

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

/// Shortest text that parses back to the same double.
inline std::string exact(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

struct BarGroup {
  std::string label;
  std::vector<double> values;  // one per series
};

/// Grouped bars, one `rect class="bar"` per value.
inline std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& series,
                                 const std::vector<BarGroup>& groups) {
  using detail::fmt;
  const double bar_w = 14, gap = 16, left = 60, top = 40, plot_h = 240;
  const double group_w = bar_w * static_cast<double>(series.size()) + gap;
  const double width = left + group_w * static_cast<double>(groups.size()) + 20 + 140;
  const double height = top + plot_h + 60;
  double vmax = 0;
  for (const auto& g : groups) {
    for (double v : g.values) vmax = std::max(vmax, v);
  }
  if (vmax <= 0) vmax = 1;
  static const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height) << "\">\n";
  s << "<text x=\"" << fmt(left) << "\" y=\"20\" font-size=\"14\">" << detail::xml_escape(title) << "</text>\n";
  s << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top + plot_h) << "\" x2=\"" << fmt(width - 150) << "\" y2=\""
    << fmt(top + plot_h) << "\" stroke=\"black\"/>\n";
  s << "<text x=\"4\" y=\"" << fmt(top + 10) << "\" font-size=\"10\">" << fmt(vmax) << "</text>\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double x0 = left + group_w * static_cast<double>(g) + gap / 2;
    for (std::size_t k = 0; k < groups[g].values.size(); ++k) {
      const double h = plot_h * groups[g].values[k] / vmax;
      s << "<rect class=\"bar\" data-series=\"" << detail::xml_escape(k < series.size() ? series[k] : "") << "\" x=\""
        << fmt(x0 + bar_w * static_cast<double>(k)) << "\" y=\"" << fmt(top + plot_h - h) << "\" width=\"" << fmt(bar_w)
        << "\" height=\"" << fmt(h) << "\" fill=\"" << colors[k % 5] << "\"/>\n";
    }
    s << "<text x=\"" << fmt(x0) << "\" y=\"" << fmt(top + plot_h + 14) << "\" font-size=\"9\">"
      << detail::xml_escape(groups[g].label) << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double y = top + 14.0 * static_cast<double>(k);
    s << "<rect x=\"" << fmt(width - 140) << "\" y=\"" << fmt(y) << "\" width=\"10\" height=\"10\" fill=\"" << colors[k % 5]
      << "\"/><text x=\"" << fmt(width - 125) << "\" y=\"" << fmt(y + 9) << "\" font-size=\"10\">"
      << detail::xml_escape(series[k]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

/// Top-down view in the scene frame: lane edges, agents (occupied lanes show
/// through them), clutter, the first interpreted path and the ego trajectory.
/// Path waypoints are written unscaled in data attributes so they can be
/// compared against the interpreter output.
inline std::string svg_scene(const Scene& scene, const EvalReport& report) {
  using detail::fmt;
  double xmin = -5, xmax = 5, ymin = -5, ymax = 5;
  auto grow = [&](const Vec3& p) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  };
  for (const auto& lane : scene.lanes) {
    grow(lane.geometry.offset_point(0, 0.5 * lane.width));
    grow(lane.geometry.offset_point(lane.geometry.length, -0.5 * lane.width));
    grow(lane.geometry.offset_point(0.5 * lane.geometry.length, 0.5 * lane.width));
  }
  for (const auto& p : report.trajectory) grow(p);
  const double scale = 8.0, pad = 10.0;
  const double w = (xmax - xmin) * scale + 2 * pad, h = (ymax - ymin) * scale + 2 * pad;
  // y up in the scene, down in SVG.
  auto px = [&](double x) { return fmt(pad + (x - xmin) * scale); };
  auto py = [&](double y) { return fmt(pad + (ymax - y) * scale); };
  auto polyline = [&](const std::vector<Vec3>& pts, const char* cls, const char* stroke) {
    std::ostringstream o;
    o << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << stroke << "\" points=\"";
    for (const auto& p : pts) o << px(p.x) << ',' << py(p.y) << ' ';
    o << "\"/>\n";
    return o.str();
  };
  auto box = [&](const OrientedBox& b, const char* cls, const char* fill) {
    std::ostringstream o;
    o << "<polygon class=\"" << cls << "\" fill=\"" << fill << "\" points=\"";
    for (const auto& c : b.corners_xy()) o << px(c.x) << ',' << py(c.y) << ' ';
    o << "\"/>\n";
    return o.str();
  };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\"" << fmt(h) << "\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << fmt(w) << "\" height=\"" << fmt(h) << "\" fill=\"#f4f4f4\"/>\n";
  for (const auto& lane : scene.lanes) {
    const auto& g = lane.geometry;
    const int steps = std::max(1, static_cast<int>(std::ceil(g.length)));
    std::vector<Vec3> left, right;
    for (int k = 0; k <= steps; ++k) {
      const double t = g.length * k / steps;
      left.push_back(g.offset_point(t, 0.5 * lane.width));
      right.push_back(g.offset_point(t, -0.5 * lane.width));
    }
    s << polyline(left, "edge", "#555") << polyline(right, "edge", "#555");
  }
  for (const auto& a : scene.agents) s << box(a, "agent", "#c44e52");
  for (const auto& c : scene.clutter) s << box(c, "clutter", "#55a868");
  if (scene.signal_s >= 0) {
    const auto& g = scene.route();
    const Vec3 a = g.offset_point(scene.signal_s, 0.5 * scene.route_width());
    const Vec3 b = g.offset_point(scene.signal_s, -0.5 * scene.route_width());
    s << "<line class=\"stop_line\" x1=\"" << px(a.x) << "\" y1=\"" << py(a.y) << "\" x2=\"" << px(b.x) << "\" y2=\""
      << py(b.y) << "\" stroke=\"" << (scene.signal == SignalState::red ? "red" : "green") << "\" stroke-width=\"3\"/>\n";
  }
  s << polyline(report.trajectory, "trajectory", "#4c72b0");
  for (const auto& p : report.first_path.waypoints) {
    s << "<circle class=\"waypoint\" cx=\"" << px(p.x) << "\" cy=\"" << py(p.y) << "\" r=\"2\" fill=\"#dd8452\" data-x=\""
      << detail::exact(p.x) << "\" data-y=\"" << detail::exact(p.y) << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace lfp
