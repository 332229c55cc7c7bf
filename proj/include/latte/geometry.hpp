#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "latte/error.hpp"
#include "latte/rng.hpp"

namespace latte {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

/// Normalized position and speed, every component in [-1, 1].
struct Waypoint {
  double x = 0, y = 0, z = 0, v = 0;

  Vec3 position() const { return {x, y, z}; }
  void set_position(const Vec3& p) {
    x = p[0];
    y = p[1];
    z = p[2];
  }
  double& operator[](std::size_t i) { return i == 0 ? x : i == 1 ? y : i == 2 ? z : v; }
  double operator[](std::size_t i) const { return i == 0 ? x : i == 1 ? y : i == 2 ? z : v; }
  bool operator==(const Waypoint&) const = default;
};

struct Trajectory {
  std::vector<Waypoint> waypoints;

  std::size_t size() const noexcept { return waypoints.size(); }
  const Waypoint& operator[](std::size_t i) const { return waypoints[i]; }
  Waypoint& operator[](std::size_t i) { return waypoints[i]; }
  bool operator==(const Trajectory&) const = default;

  bool in_unit_box() const {
    return std::all_of(waypoints.begin(), waypoints.end(), [](const Waypoint& w) {
      for (std::size_t i = 0; i < 4; ++i) {
        if (!(w[i] >= -1.0 && w[i] <= 1.0)) return false;
      }
      return true;
    });
  }
};

struct SceneObject {
  std::string name;
  Vec3 position{0, 0, 0};
  std::optional<std::string> image_ref;
  bool operator==(const SceneObject&) const = default;
};

inline constexpr std::size_t kDefaultMaxObjects = 6;
inline constexpr std::size_t kDefaultWaypoints = 40;

struct Scene {
  std::vector<SceneObject> objects;

  std::size_t size() const noexcept { return objects.size(); }
  bool operator==(const Scene&) const = default;

  const SceneObject* find(const std::string& name) const {
    for (const auto& o : objects) {
      if (o.name == name) return &o;
    }
    return nullptr;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& o : objects) out.push_back(o.name);
    return out;
  }

  void validate(std::size_t max_objects = kDefaultMaxObjects) const {
    if (objects.size() > max_objects) {
      throw PreconditionError("scene has " + std::to_string(objects.size()) +
                              " objects, at most " + std::to_string(max_objects) + " allowed");
    }
    std::set<std::string> seen;
    for (const auto& o : objects) {
      if (o.name.empty()) throw SchemaError("scene object with empty name");
      if (!seen.insert(o.name).second) throw SchemaError("duplicate object name '" + o.name + "'");
      for (double c : o.position) {
        if (!(c >= -1.0 && c <= 1.0)) {
          throw SchemaError("object '" + o.name + "' position outside [-1, 1]");
        }
      }
    }
  }
};

/// Mean over all N x 4 components of the squared difference.
inline double trajectory_mse(const Trajectory& a, const Trajectory& b) {
  if (a.size() != b.size()) {
    throw DimensionError("trajectory_mse: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
  }
  if (a.size() == 0) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double d = a[i][c] - b[i][c];
      total += d * d;
    }
  }
  return total / static_cast<double>(4 * a.size());
}

/// Piecewise-linear re-parameterization by index to `count` waypoints.
inline Trajectory resample(const Trajectory& t, std::size_t count) {
  if (t.size() < 2 || count < 2) {
    throw PreconditionError("resample needs at least two input and output waypoints");
  }
  Trajectory out;
  out.waypoints.resize(count);
  const double scale = static_cast<double>(t.size() - 1) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) {
    if (i == count - 1) {
      out[i] = t.waypoints.back();
      continue;
    }
    const double u = static_cast<double>(i) * scale;
    const auto lo = std::min(static_cast<std::size_t>(std::floor(u)), t.size() - 2);
    const double f = u - static_cast<double>(lo);
    for (std::size_t c = 0; c < 4; ++c) out[i][c] = (1.0 - f) * t[lo][c] + f * t[lo + 1][c];
  }
  return out;
}

namespace detail {

inline Waypoint catmull_rom(const Waypoint& p0, const Waypoint& p1, const Waypoint& p2,
                            const Waypoint& p3, double t) {
  const double t2 = t * t, t3 = t2 * t;
  Waypoint out;
  for (std::size_t c = 0; c < 4; ++c) {
    out[c] = 0.5 * (2.0 * p1[c] + (-p0[c] + p2[c]) * t +
                    (2.0 * p0[c] - 5.0 * p1[c] + 4.0 * p2[c] - p3[c]) * t2 +
                    (-p0[c] + 3.0 * p1[c] - 3.0 * p2[c] + p3[c]) * t3);
  }
  return out;
}

}  // namespace detail

/// Uniform Catmull-Rom curve through `controls`, sampled at `count` uniformly
/// spaced parameter values from the first to the last control point. End
/// tangents use reflected ghost points.
inline Trajectory catmull_rom_curve(const std::vector<Waypoint>& controls, std::size_t count) {
  if (controls.size() < 2 || count < 2) throw PreconditionError("spline needs >= 2 controls and samples");
  const std::size_t segments = controls.size() - 1;
  auto control = [&](std::ptrdiff_t i) -> Waypoint {
    const auto last = static_cast<std::ptrdiff_t>(controls.size()) - 1;
    if (i < 0) {
      Waypoint g;
      for (std::size_t c = 0; c < 4; ++c) g[c] = 2.0 * controls[0][c] - controls[1][c];
      return g;
    }
    if (i > last) {
      Waypoint g;
      for (std::size_t c = 0; c < 4; ++c) {
        g[c] = 2.0 * controls[static_cast<std::size_t>(last)][c] - controls[static_cast<std::size_t>(last) - 1][c];
      }
      return g;
    }
    return controls[static_cast<std::size_t>(i)];
  };
  Trajectory out;
  out.waypoints.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    // Integer arithmetic first so that control points land exactly on samples
    // when (count - 1) is a multiple of the segment count.
    const std::size_t num = i * segments;
    std::size_t seg = num / (count - 1);
    double t = static_cast<double>(num % (count - 1)) / static_cast<double>(count - 1);
    if (seg == segments) {
      seg = segments - 1;
      t = 1.0;
    }
    const auto s = static_cast<std::ptrdiff_t>(seg);
    out[i] = detail::catmull_rom(control(s - 1), control(s), control(s + 1), control(s + 2), t);
  }
  return out;
}

struct RandomWalkOptions {
  std::size_t steps = 100;
  double step_size = 0.1;
  double start_extent = 0.5;
};

/// Random walk in the unit cube, `n_control` points picked at uniform index
/// spacing, Catmull-Rom fit resampled to `count` waypoints. Speed is 0.
inline Trajectory random_walk_spline(std::uint64_t seed, std::size_t n_control = 6,
                                     std::size_t count = kDefaultWaypoints,
                                     const RandomWalkOptions& opts = {}) {
  if (n_control < 4) throw PreconditionError("random_walk_spline needs n_control >= 4");
  if (count < n_control) throw PreconditionError("random_walk_spline needs N >= n_control");
  Rng rng(seed);
  std::vector<Vec3> walk;
  Vec3 p{rng.uniform(-opts.start_extent, opts.start_extent),
         rng.uniform(-opts.start_extent, opts.start_extent),
         rng.uniform(-opts.start_extent, opts.start_extent)};
  walk.push_back(p);
  for (std::size_t s = 0; s < opts.steps; ++s) {
    for (auto& c : p) c = clamp_unit(c + rng.uniform(-opts.step_size, opts.step_size));
    walk.push_back(p);
  }
  std::vector<Waypoint> controls;
  for (std::size_t j = 0; j < n_control; ++j) {
    const std::size_t idx = (j * (walk.size() - 1)) / (n_control - 1);
    Waypoint w;
    w.set_position(walk[idx]);
    controls.push_back(w);
  }
  Trajectory out = catmull_rom_curve(controls, count);
  for (auto& w : out.waypoints) {
    for (std::size_t c = 0; c < 3; ++c) w[c] = clamp_unit(w[c]);
    w.v = 0.0;
  }
  return out;
}

// ----------------------------------------------------------------------------
// JSON schema: {"waypoints": [[x,y,z,v],...], "objects": [{"name": str,
// "position": [x,y,z]}]}

using nlohmann::json;

inline json to_json_value(const Trajectory& t) {
  json arr = json::array();
  for (const auto& w : t.waypoints) arr.push_back({w.x, w.y, w.z, w.v});
  return arr;
}

inline json to_json_value(const Scene& s) {
  json arr = json::array();
  for (const auto& o : s.objects) {
    json obj = {{"name", o.name}, {"position", {o.position[0], o.position[1], o.position[2]}}};
    if (o.image_ref) obj["image_ref"] = *o.image_ref;
    arr.push_back(std::move(obj));
  }
  return arr;
}

namespace detail {

inline double number_at(const json& j, const std::string& path) {
  if (!j.is_number()) throw SchemaError("expected a number at " + path);
  return j.get<double>();
}

}  // namespace detail

inline Trajectory trajectory_from_json(const json& arr, const std::string& path = "waypoints") {
  if (!arr.is_array()) throw SchemaError("expected an array at " + path);
  Trajectory t;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto p = path + "[" + std::to_string(i) + "]";
    if (!arr[i].is_array() || arr[i].size() != 4) throw SchemaError("expected [x,y,z,v] at " + p);
    Waypoint w;
    for (std::size_t c = 0; c < 4; ++c) w[c] = detail::number_at(arr[i][c], p + "[" + std::to_string(c) + "]");
    t.waypoints.push_back(w);
  }
  return t;
}

inline Scene scene_from_json(const json& arr, const std::string& path = "objects") {
  if (!arr.is_array()) throw SchemaError("expected an array at " + path);
  Scene s;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto p = path + "[" + std::to_string(i) + "]";
    const auto& o = arr[i];
    if (!o.is_object()) throw SchemaError("expected an object at " + p);
    if (!o.contains("name") || !o["name"].is_string()) throw SchemaError("expected a string at " + p + ".name");
    if (!o.contains("position") || !o["position"].is_array() || o["position"].size() != 3) {
      throw SchemaError("expected [x,y,z] at " + p + ".position");
    }
    SceneObject obj;
    obj.name = o["name"].get<std::string>();
    for (std::size_t c = 0; c < 3; ++c) {
      obj.position[c] = detail::number_at(o["position"][c], p + ".position[" + std::to_string(c) + "]");
    }
    if (o.contains("image_ref") && o["image_ref"].is_string()) obj.image_ref = o["image_ref"].get<std::string>();
    s.objects.push_back(std::move(obj));
  }
  return s;
}

}  // namespace latte
