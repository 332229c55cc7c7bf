#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "latte/error.hpp"
#include "latte/geometry.hpp"

namespace latte {

struct Box {
  Vec3 min{-1, -1, -1};
  Vec3 max{1, 1, 1};

  bool operator==(const Box&) const = default;

  bool contains_closed(const Vec3& p) const {
    for (std::size_t k = 0; k < 3; ++k) {
      if (!(p[k] >= min[k] && p[k] <= max[k])) return false;
    }
    return true;
  }

  bool contains_open(const Vec3& p) const {
    for (std::size_t k = 0; k < 3; ++k) {
      if (!(p[k] > min[k] && p[k] < max[k])) return false;
    }
    return true;
  }
};

/// Keep-in box (closed) minus keep-out boxes (open).
struct AdmissibleRegion {
  Box keep_in;
  std::vector<Box> keep_out;

  bool operator==(const AdmissibleRegion&) const = default;
};

struct RaycastConfig {
  double step = 0.01;
};

inline bool is_admissible(const Vec3& p, const AdmissibleRegion& k) {
  if (!k.keep_in.contains_closed(p)) return false;
  for (const auto& b : k.keep_out) {
    if (b.contains_open(p)) return false;
  }
  return true;
}

/// True if `p` lies in the closure of any keep-out box.
inline bool touches_keep_out(const Vec3& p, const AdmissibleRegion& k) {
  for (const auto& b : k.keep_out) {
    if (b.contains_closed(p)) return true;
  }
  return false;
}

inline bool is_admissible(const Trajectory& t, const AdmissibleRegion& k) {
  for (const auto& w : t.waypoints) {
    if (!is_admissible(w.position(), k)) return false;
  }
  return true;
}

/// Marches each waypoint from its original position toward the modified one
/// and stops at the last sample before the ray reaches a keep-out box (its
/// boundary included) or leaves the keep-in box. The endpoint itself only
/// has to be admissible. Speeds are taken from `modified` unchanged.
inline Trajectory project_trajectory(const Trajectory& original, const Trajectory& modified, const AdmissibleRegion& k,
                                     const RaycastConfig& cfg = {}) {
  if (!(cfg.step > 0.0)) throw PreconditionError("march step must be positive");
  if (original.size() != modified.size()) {
    throw DimensionError("trajectories differ in length: " + std::to_string(original.size()) + " vs " +
                         std::to_string(modified.size()));
  }
  Trajectory out = modified;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const Vec3 a = original[i].position();
    const Vec3 b = modified[i].position();
    if (!is_admissible(a, k)) {
      throw PreconditionError("original waypoint " + std::to_string(i) + " is not admissible");
    }
    const Vec3 d = b - a;
    const double len = norm(d);
    const auto steps = static_cast<std::size_t>(std::ceil(len / cfg.step));
    Vec3 last = a;
    bool blocked = false;
    for (std::size_t s = 1; s <= steps; ++s) {
      const bool end = s == steps;
      const Vec3 p = end ? b : a + (static_cast<double>(s) * cfg.step / len) * d;
      if (!is_admissible(p, k) || (!end && touches_keep_out(p, k))) {
        blocked = true;
        break;
      }
      last = p;
    }
    out[i].set_position(blocked ? last : b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON: {"keep_in": [[min],[max]], "keep_out": [[[min],[max]], ...]}

inline nlohmann::json to_json_value(const Box& b) {
  return nlohmann::json::array({{b.min[0], b.min[1], b.min[2]}, {b.max[0], b.max[1], b.max[2]}});
}

inline nlohmann::json to_json_value(const AdmissibleRegion& k) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : k.keep_out) out.push_back(to_json_value(b));
  return {{"keep_in", to_json_value(k.keep_in)}, {"keep_out", out}};
}

inline Box box_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) throw SchemaError("expected [[min],[max]] at " + path);
  Box b;
  for (std::size_t corner = 0; corner < 2; ++corner) {
    const auto& c = j[corner];
    const auto cpath = path + "[" + std::to_string(corner) + "]";
    if (!c.is_array() || c.size() != 3) throw SchemaError("expected three numbers at " + cpath);
    for (std::size_t k = 0; k < 3; ++k) {
      if (!c[k].is_number()) throw SchemaError("expected a number at " + cpath + "[" + std::to_string(k) + "]");
      (corner == 0 ? b.min : b.max)[k] = c[k].get<double>();
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    if (b.min[k] > b.max[k]) throw SchemaError("box min exceeds max at " + path);
  }
  return b;
}

inline AdmissibleRegion region_from_json(const nlohmann::json& j, const std::string& path = "region") {
  if (!j.is_object()) throw SchemaError("expected an object at " + path);
  AdmissibleRegion k;
  if (j.contains("keep_in")) k.keep_in = box_from_json(j["keep_in"], path + ".keep_in");
  if (j.contains("keep_out")) {
    const auto& arr = j["keep_out"];
    if (!arr.is_array()) throw SchemaError("expected an array at " + path + ".keep_out");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      k.keep_out.push_back(box_from_json(arr[i], path + ".keep_out[" + std::to_string(i) + "]"));
    }
  }
  return k;
}

}  // namespace latte
