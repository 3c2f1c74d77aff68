#pragma once

// Double-edge lane model: paired left/right boundary samples with lane-level
// (intersection, direction) and point-level (occupancy, planning) flags, the
// path interpreter, and the JSON interchange format.
//
// Frame: ego-centric, x forward, y left, z up, meters. Edge samples are
// ordered by increasing arc length from the ego vehicle.

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "lfp/common.hpp"

namespace lfp {

struct EdgePoint {
  Vec3 position;
  // Stored as int so out-of-domain values from raw input stay representable
  // and reach validate() instead of being silently coerced.
  int occ = 0;
  int plan = 0;

  friend bool operator==(const EdgePoint&, const EdgePoint&) = default;
};

using Edge = std::vector<EdgePoint>;

struct DoubleEdgeLane {
  Edge left;
  Edge right;
  int intersection = 0;
  int direction = 0;

  friend bool operator==(const DoubleEdgeLane&, const DoubleEdgeLane&) = default;
};

/// `n_d` is the declared lane count and must equal lanes.size(). Predictions
/// carry the configured slot count; ground truth carries its real lane count.
struct DoubleEdgeSet {
  int n_d = 0;
  int n_p = 0;
  std::vector<DoubleEdgeLane> lanes;

  int edge_length() const { return n_p / 2; }
  friend bool operator==(const DoubleEdgeSet&, const DoubleEdgeSet&) = default;
};

struct PlannedPath {
  std::vector<Vec3> waypoints;
  double target_speed = 0.0;

  bool empty() const { return waypoints.empty(); }
};

inline bool is_flag(int v) { return v == 0 || v == 1; }

/// Lists every invariant violation; empty means the set is well formed.
inline std::vector<std::string> validate(const DoubleEdgeSet& set) {
  std::vector<std::string> out;
  if (set.n_p <= 0 || set.n_p % 2 != 0) {
    out.push_back("n_p must be a positive even number, got " + std::to_string(set.n_p));
  }
  if (set.n_d < 0 || static_cast<std::size_t>(set.n_d) != set.lanes.size()) {
    out.push_back("n_d = " + std::to_string(set.n_d) + " but " + std::to_string(set.lanes.size()) +
                  " lanes present");
  }
  const std::size_t half = set.n_p > 0 ? static_cast<std::size_t>(set.n_p / 2) : 0;
  for (std::size_t i = 0; i < set.lanes.size(); ++i) {
    const auto& lane = set.lanes[i];
    const std::string at = "lanes[" + std::to_string(i) + "]";
    if (!is_flag(lane.intersection)) out.push_back(at + ".int out of {0,1}: " + std::to_string(lane.intersection));
    if (!is_flag(lane.direction)) out.push_back(at + ".dir out of {0,1}: " + std::to_string(lane.direction));
    if (lane.left.size() != lane.right.size()) {
      out.push_back(at + " edge length mismatch: left " + std::to_string(lane.left.size()) + ", right " +
                    std::to_string(lane.right.size()));
    } else if (lane.left.size() != half) {
      out.push_back(at + " edge length " + std::to_string(lane.left.size()) + " != n_p/2 = " + std::to_string(half));
    }
    for (const auto* side : {&lane.left, &lane.right}) {
      const std::string name = at + (side == &lane.left ? ".left" : ".right");
      for (std::size_t j = 0; j < side->size(); ++j) {
        const auto& pt = (*side)[j];
        const std::string pat = name + "[" + std::to_string(j) + "]";
        if (!pt.position.finite()) out.push_back(pat + ".p not finite");
        if (!is_flag(pt.occ)) out.push_back(pat + ".occ out of {0,1}: " + std::to_string(pt.occ));
        if (!is_flag(pt.plan)) out.push_back(pat + ".plan out of {0,1}: " + std::to_string(pt.plan));
      }
    }
  }
  return out;
}

/// Midpoints of every index-aligned edge pair whose plan flags are both set,
/// lane order first, then point order. An empty result means "no plan".
inline PlannedPath interpret_path(const DoubleEdgeSet& set, double target_speed) {
  PlannedPath path;
  path.target_speed = target_speed;
  for (std::size_t i = 0; i < set.lanes.size(); ++i) {
    const auto& lane = set.lanes[i];
    if (lane.left.size() != lane.right.size()) {
      throw StructuralError("interpret_path: lane " + std::to_string(i) + " has mismatched edge lengths");
    }
    for (std::size_t j = 0; j < lane.left.size(); ++j) {
      const auto& l = lane.left[j];
      const auto& r = lane.right[j];
      if (l.plan == 1 && r.plan == 1) path.waypoints.push_back(0.5 * (l.position + r.position));
    }
  }
  return path;
}

// ---------------------------------------------------------------------------
// JSON interchange

inline nlohmann::json vec3_to_json(const Vec3& v) { return nlohmann::json::array({v.x, v.y, v.z}); }

inline nlohmann::json to_json(const DoubleEdgeSet& set) {
  using nlohmann::json;
  json lanes = json::array();
  for (const auto& lane : set.lanes) {
    auto edge_json = [](const Edge& e) {
      json arr = json::array();
      for (const auto& pt : e) arr.push_back({{"p", vec3_to_json(pt.position)}, {"occ", pt.occ}, {"plan", pt.plan}});
      return arr;
    };
    lanes.push_back({{"int", lane.intersection},
                     {"dir", lane.direction},
                     {"left", edge_json(lane.left)},
                     {"right", edge_json(lane.right)}});
  }
  return {{"n_d", set.n_d}, {"n_p", set.n_p}, {"lanes", std::move(lanes)}};
}

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ParseError("expected object", path);
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("missing field '") + key + "'", path);
  return *it;
}

inline int as_int(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ParseError("expected integer", path);
  return j.get<int>();
}

inline double as_double(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) throw ParseError("expected number", path);
  return j.get<double>();
}

inline Vec3 as_vec3(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw ParseError("expected [x, y, z]", path);
  return {as_double(j[0], path + "[0]"), as_double(j[1], path + "[1]"), as_double(j[2], path + "[2]")};
}

}  // namespace detail

/// Structural decode only; flag domains and lengths are left to validate().
inline DoubleEdgeSet double_edge_from_json_raw(const nlohmann::json& j, const std::string& root = "$") {
  using detail::as_int;
  using detail::field;
  DoubleEdgeSet set;
  set.n_d = as_int(field(j, "n_d", root), root + ".n_d");
  set.n_p = as_int(field(j, "n_p", root), root + ".n_p");
  const auto& lanes = field(j, "lanes", root);
  if (!lanes.is_array()) throw ParseError("expected array", root + ".lanes");
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const std::string at = root + ".lanes[" + std::to_string(i) + "]";
    DoubleEdgeLane lane;
    lane.intersection = as_int(field(lanes[i], "int", at), at + ".int");
    lane.direction = as_int(field(lanes[i], "dir", at), at + ".dir");
    for (auto [key, edge] : {std::pair{"left", &lane.left}, std::pair{"right", &lane.right}}) {
      const std::string eat = at + "." + key;
      const auto& arr = field(lanes[i], key, at);
      if (!arr.is_array()) throw ParseError("expected array", eat);
      for (std::size_t k = 0; k < arr.size(); ++k) {
        const std::string pat = eat + "[" + std::to_string(k) + "]";
        EdgePoint pt;
        pt.position = detail::as_vec3(field(arr[k], "p", pat), pat + ".p");
        pt.occ = as_int(field(arr[k], "occ", pat), pat + ".occ");
        pt.plan = as_int(field(arr[k], "plan", pat), pat + ".plan");
        edge->push_back(pt);
      }
    }
    set.lanes.push_back(std::move(lane));
  }
  return set;
}

inline DoubleEdgeSet double_edge_from_json(const nlohmann::json& j, const std::string& root = "$") {
  auto set = double_edge_from_json_raw(j, root);
  if (auto diags = validate(set); !diags.empty()) throw ValidationError(std::move(diags));
  return set;
}

inline nlohmann::json parse_json_text(std::string_view text) {
  try {
    return nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.what(), "byte " + std::to_string(e.byte));
  }
}

/// Throws ValidationError when the set does not validate.
inline std::string serialize(const DoubleEdgeSet& set) {
  if (auto diags = validate(set); !diags.empty()) throw ValidationError(std::move(diags));
  return to_json(set).dump();
}

inline DoubleEdgeSet deserialize_raw(std::string_view text) { return double_edge_from_json_raw(parse_json_text(text)); }

inline DoubleEdgeSet deserialize(std::string_view text) { return double_edge_from_json(parse_json_text(text)); }

}  // namespace lfp
