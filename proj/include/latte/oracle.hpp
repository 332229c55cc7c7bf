#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "latte/geometry.hpp"
#include "latte/intent.hpp"
#include "latte/labels.hpp"
#include "latte/rng.hpp"

namespace latte {

/// Radius of influence of local fields for a locality factor in [0, 1].
inline double locality_range(double lf) { return 0.1 + 1.9 * lf; }

/// Iteration schedule and gains of the handcrafted fields. With the defaults a
/// default-intensity cartesian command moves every waypoint by 0.3 and a
/// global speed command changes every speed by 0.25.
struct FieldConfig {
  std::size_t steps = 10;
  double step_gain = 0.03;
  double position_gain = 1.0;
  double speed_total = 0.25;

  double speed_gain() const { return speed_total / (static_cast<double>(steps) * step_gain); }
};

using FieldValue = std::array<double, 4>;

/// Vector field over the workspace: position -> (dx, dy, dz, dv).
class ForceField {
 public:
  static ForceField zero() { return ForceField{}; }

  static ForceField constant(const FieldValue& value) {
    ForceField f;
    f.family_ = Family::constant;
    f.value_ = value;
    return f;
  }

  static ForceField radial(const Vec3& center, double magnitude, double range) {
    ForceField f;
    f.family_ = Family::radial;
    f.center_ = center;
    f.magnitude_ = magnitude;
    f.range_ = range;
    return f;
  }

  static ForceField local_speed(const Vec3& center, double dv, double range) {
    ForceField f;
    f.family_ = Family::local_speed;
    f.center_ = center;
    f.magnitude_ = dv;
    f.range_ = range;
    return f;
  }

  FieldValue operator()(const Vec3& p) const {
    switch (family_) {
      case Family::zero: return {0, 0, 0, 0};
      case Family::constant: return value_;
      case Family::radial: {
        const Vec3 d = p - center_;
        const double dist = norm(d);
        if (dist > range_ || dist == 0.0) return {0, 0, 0, 0};
        const double s = magnitude_ / dist;
        return {s * d[0], s * d[1], s * d[2], 0};
      }
      case Family::local_speed: {
        if (norm(p - center_) > range_) return {0, 0, 0, 0};
        return {0, 0, 0, magnitude_};
      }
    }
    return {0, 0, 0, 0};
  }

  /// One update p <- clamp(p + gain * field(p)). Radial moves are shortened
  /// so a waypoint stops on the support boundary (outward) or on the center
  /// (inward) instead of stepping past it.
  Waypoint step(const Waypoint& w, double gain) const {
    const FieldValue f = (*this)(w.position());
    double scale = gain;
    if (family_ == Family::radial && magnitude_ != 0.0) {
      const double dist = norm(w.position() - center_);
      const double len = gain * std::abs(magnitude_);
      const double room = magnitude_ > 0.0 ? range_ - dist : dist;
      if (len > room) scale = gain * std::max(room, 0.0) / len;
    }
    Waypoint out = w;
    for (std::size_t c = 0; c < 4; ++c) out[c] = clamp_unit(w[c] + scale * f[c]);
    return out;
  }

  /// Support radius for local fields, infinity for global ones.
  double range() const {
    return family_ == Family::radial || family_ == Family::local_speed ? range_ : INFINITY;
  }

 private:
  enum class Family { zero, constant, radial, local_speed };
  Family family_ = Family::zero;
  FieldValue value_{0, 0, 0, 0};
  Vec3 center_{0, 0, 0};
  double magnitude_ = 0;
  double range_ = 0;
};

inline ForceField make_field(const ModificationIntent& intent, const Scene& scene,
                             const FieldConfig& cfg = {}) {
  intent.validate(scene);
  const double range = locality_range(intent.locality_factor);
  switch (intent.kind) {
    case IntentKind::cartesian: {
      const Vec3 d = direction_vector(*intent.direction);
      const double g = cfg.position_gain * intent.intensity;
      return ForceField::constant({g * d[0], g * d[1], g * d[2], 0});
    }
    case IntentKind::distance: {
      const double sign = intent.polarity == Polarity::closer ? -1.0 : 1.0;
      return ForceField::radial(scene.find(*intent.target)->position,
                                sign * cfg.position_gain * intent.intensity, range);
    }
    case IntentKind::speed_global:
    case IntentKind::speed_local: {
      const double sign = intent.polarity == Polarity::slower ? -1.0 : 1.0;
      const double dv = sign * cfg.speed_gain() * intent.intensity;
      if (intent.kind == IntentKind::speed_global) return ForceField::constant({0, 0, 0, dv});
      return ForceField::local_speed(scene.find(*intent.target)->position, dv, range);
    }
  }
  return ForceField::zero();
}

/// ForceField::step repeated `steps` times per waypoint.
inline Trajectory apply_field(const Trajectory& traj, const ForceField& field, std::size_t steps,
                              double step_gain) {
  if (steps == 0) throw PreconditionError("field iteration count must be >= 1");
  if (!(step_gain > 0.0)) throw PreconditionError("field step gain must be positive");
  Trajectory out = traj;
  for (auto& w : out.waypoints) {
    for (std::size_t s = 0; s < steps; ++s) w = field.step(w, step_gain);
  }
  return out;
}

inline Trajectory apply_field(const Trajectory& traj, const ForceField& field, const FieldConfig& cfg = {}) {
  return apply_field(traj, field, cfg.steps, cfg.step_gain);
}

/// Oracle reshaping: the intent's field applied to the trajectory.
inline Trajectory oracle_reshape(const Trajectory& traj, const ModificationIntent& intent,
                                 const Scene& scene, const FieldConfig& cfg = {}) {
  return apply_field(traj, make_field(intent, scene, cfg), cfg);
}

// ---------------------------------------------------------------------------
// Text rendering

namespace detail {

template <typename Range>
std::string pick(const Range& options, Rng& rng) {
  return std::string(options[rng.index(options.size())]);
}

inline std::string intensity_phrase(double intensity, Rng& rng) {
  if (intensity == kIntensityVery) return pick(grammar::kVeryWords, rng);
  if (intensity == kIntensityBit) return pick(grammar::kBitWords, rng);
  return {};
}

inline std::string join_words(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (!out.empty()) out.push_back(' ');
    out += p;
  }
  return out;
}

}  // namespace detail

/// Samples a command sentence realizing `intent` from the template grammar.
inline std::string render_text(const ModificationIntent& intent, Rng& rng) {
  intent.validate();
  const bool plain = intent.intensity == kIntensityDefault;
  const std::string adv = detail::intensity_phrase(intent.intensity, rng);
  using detail::join_words;
  using detail::pick;
  switch (intent.kind) {
    case IntentKind::cartesian: {
      const std::string dir = pick(grammar::direction_words(*intent.direction), rng);
      const std::size_t form = rng.index(plain ? 3 : 2);
      if (plain && form == 2) return join_words({pick(grammar::kStayVerbs, rng), "on the", dir});
      if (plain && form == 0) return join_words({pick(grammar::kMoveVerbs, rng), "to the", dir});
      if (form == 1 && !plain) return join_words({"stay", adv, "more on the", dir});
      return join_words({pick(grammar::kMoveVerbs, rng), adv, "more to the", dir});
    }
    case IntentKind::distance: {
      const bool closer = intent.polarity == Polarity::closer;
      if (plain && rng.index(4) == 0) {
        return join_words({std::string(closer ? grammar::kKeepCloser : grammar::kKeepFurther), "the", *intent.target});
      }
      return join_words({pick(grammar::kDistanceVerbs, rng), adv,
                         std::string(closer ? grammar::kCloser : grammar::kFurther), "the", *intent.target});
    }
    case IntentKind::speed_global:
    case IntentKind::speed_local: {
      const bool faster = intent.polarity == Polarity::faster;
      const bool local = intent.kind == IntentKind::speed_local;
      if (plain && rng.index(3) == 0) {
        const std::string verb = faster ? pick(grammar::kIncreaseVerbs, rng) : pick(grammar::kDecreaseVerbs, rng);
        const std::string noun = pick(grammar::kSpeedNouns, rng);
        if (!local) return join_words({verb, "the", noun});
        return join_words({verb, "the", noun, std::string(grammar::kLocalSpeedContext), "the", *intent.target});
      }
      const std::string head = join_words({pick(grammar::kMoveVerbs, rng), adv, faster ? "faster" : "slower"});
      if (!local) return head;
      return join_words({head, pick(grammar::kLocalContexts, rng), "the", *intent.target});
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Dataset samples

struct DatasetSample {
  Trajectory original;
  std::string text;
  ModificationIntent intent;
  Trajectory modified;
  Scene scene;
  std::optional<double> lf;  // present iff the dataset is locality-enabled

  bool operator==(const DatasetSample&) const = default;
};

struct GeneratorConfig {
  std::size_t waypoints = kDefaultWaypoints;
  std::size_t max_objects = kDefaultMaxObjects;
  std::size_t n_control = 6;
  bool lf_enabled = true;
  double object_spread = 0.4;  // object offset from a random waypoint, per axis
  FieldConfig field;
};

/// Draws a uniform intent over the three families for the given scene.
inline ModificationIntent sample_intent(const Scene& scene, Rng& rng) {
  ModificationIntent intent;
  intent.intensity = kIntensities[rng.index(kIntensities.size())];
  const auto family = static_cast<IntentFamily>(rng.index(3));
  auto target = [&] { return scene.objects[rng.index(scene.size())].name; };
  switch (family) {
    case IntentFamily::cartesian:
      intent.kind = IntentKind::cartesian;
      intent.direction = static_cast<Direction>(rng.index(6));
      break;
    case IntentFamily::distance:
      intent.kind = IntentKind::distance;
      intent.polarity = rng.index(2) ? Polarity::further : Polarity::closer;
      intent.target = target();
      break;
    case IntentFamily::speed:
      intent.kind = rng.index(2) ? IntentKind::speed_local : IntentKind::speed_global;
      intent.polarity = rng.index(2) ? Polarity::slower : Polarity::faster;
      if (intent.kind == IntentKind::speed_local) intent.target = target();
      break;
  }
  return intent;
}

inline Scene sample_scene(const Trajectory& traj, const GeneratorConfig& cfg, Rng& rng) {
  const std::size_t count = 1 + rng.index(cfg.max_objects);
  std::vector<std::size_t> pool(kObjectLabels.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  Scene scene;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t j = k + rng.index(pool.size() - k);
    std::swap(pool[k], pool[j]);
    SceneObject obj;
    obj.name = std::string(kObjectLabels[pool[k]]);
    const Vec3 anchor = traj[rng.index(traj.size())].position();
    for (std::size_t c = 0; c < 3; ++c) {
      obj.position[c] = clamp_unit(anchor[c] + rng.uniform(-cfg.object_spread, cfg.object_spread));
    }
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

inline DatasetSample generate_sample(std::uint64_t seed, const GeneratorConfig& cfg = {}) {
  Rng rng(mix_seed(seed, 1));
  DatasetSample s;
  s.original = random_walk_spline(mix_seed(seed, 0), cfg.n_control, cfg.waypoints);
  s.scene = sample_scene(s.original, cfg, rng);
  s.intent = sample_intent(s.scene, rng);
  const double lf = rng.uniform();
  if (cfg.lf_enabled) {
    s.intent.locality_factor = lf;
    s.lf = lf;
  }
  s.text = render_text(s.intent, rng);
  s.modified = oracle_reshape(s.original, s.intent, s.scene, cfg.field);
  return s;
}

// ---------------------------------------------------------------------------
// Geometric augmentation

struct AugmentationConfig {
  double shift = 0.2;  // per-axis shift uniform in [-shift, shift]
  double scale_min = 0.6;
  double scale_max = 1.2;
  bool enabled = true;
  std::size_t max_tries = 20;
};

/// p -> scale * p + shift on every position of the sample (both trajectories
/// and all objects). Speeds are untouched.
inline DatasetSample apply_affine(const DatasetSample& s, const Vec3& shift, double scale) {
  DatasetSample out = s;
  auto move = [&](const Vec3& p) { return scale * p + shift; };
  for (auto* traj : {&out.original, &out.modified}) {
    for (auto& w : traj->waypoints) w.set_position(move(w.position()));
  }
  for (auto& o : out.scene.objects) o.position = move(o.position);
  return out;
}

inline bool positions_in_unit_box(const DatasetSample& s) {
  if (!s.original.in_unit_box() || !s.modified.in_unit_box()) return false;
  for (const auto& o : s.scene.objects) {
    for (double c : o.position) {
      if (!(c >= -1.0 && c <= 1.0)) return false;
    }
  }
  return true;
}

inline DatasetSample augment_geometric(const DatasetSample& s, Rng& rng, const AugmentationConfig& cfg = {}) {
  if (!cfg.enabled) return s;
  for (std::size_t attempt = 0; attempt < cfg.max_tries; ++attempt) {
    const Vec3 shift{rng.uniform(-cfg.shift, cfg.shift), rng.uniform(-cfg.shift, cfg.shift),
                     rng.uniform(-cfg.shift, cfg.shift)};
    const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    DatasetSample out = apply_affine(s, shift, scale);
    if (positions_in_unit_box(out)) return out;
  }
  return s;
}

// ---------------------------------------------------------------------------
// JSON-lines dataset: one object per line,
// {"waypoints", "objects", "modified", "text", "intent", "lf"?}

inline nlohmann::json to_json_value(const DatasetSample& s) {
  nlohmann::json j;
  j["waypoints"] = to_json_value(s.original);
  j["objects"] = to_json_value(s.scene);
  j["modified"] = to_json_value(s.modified);
  j["text"] = s.text;
  j["intent"] = to_json_value(s.intent);
  if (s.lf) j["lf"] = *s.lf;
  return j;
}

inline DatasetSample sample_from_json(const nlohmann::json& j, const std::string& path = "") {
  if (!j.is_object()) throw SchemaError("expected an object" + (path.empty() ? "" : " at " + path));
  auto field = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw SchemaError("missing field " + path + key);
    return j[key];
  };
  DatasetSample s;
  s.original = trajectory_from_json(field("waypoints"), path + "waypoints");
  s.scene = scene_from_json(field("objects"), path + "objects");
  s.modified = trajectory_from_json(field("modified"), path + "modified");
  if (!field("text").is_string()) throw SchemaError("expected a string at " + path + "text");
  s.text = j["text"].get<std::string>();
  s.intent = intent_from_json(field("intent"), path + "intent");
  if (j.contains("lf")) {
    if (!j["lf"].is_number()) throw SchemaError("expected a number at " + path + "lf");
    s.lf = j["lf"].get<double>();
    s.intent.locality_factor = *s.lf;
  }
  if (s.original.size() != s.modified.size()) {
    throw SchemaError("original and modified trajectories differ in length at " + path);
  }
  return s;
}

struct DatasetSummary {
  std::size_t count = 0;
  std::map<std::string, std::size_t> families;
  std::map<std::string, std::size_t> kinds;

  nlohmann::json to_json() const {
    return {{"count", count}, {"families", families}, {"kinds", kinds}};
  }
};

struct DatasetOptions {
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  bool augment = false;
  GeneratorConfig generator;
  AugmentationConfig augmentation;
};

/// Sample i of a dataset is generated from mix_seed(seed, i).
inline DatasetSample dataset_sample(const DatasetOptions& opts, std::size_t i) {
  const auto seed = mix_seed(opts.seed, 1000 + i);
  DatasetSample s = generate_sample(seed, opts.generator);
  if (opts.augment) {
    Rng rng(mix_seed(seed, 7));
    s = augment_geometric(s, rng, opts.augmentation);
  }
  return s;
}

inline DatasetSummary generate_dataset(const DatasetOptions& opts, const std::string& path) {
  if (opts.count == 0) throw PreconditionError("dataset size must be >= 1");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset to '" + path + "'");
  DatasetSummary summary;
  for (std::size_t i = 0; i < opts.count; ++i) {
    const DatasetSample s = dataset_sample(opts, i);
    out << to_json_value(s).dump() << '\n';
    ++summary.count;
    ++summary.families[std::string(to_string(family_of(s.intent.kind)))];
    ++summary.kinds[std::string(to_string(s.intent.kind))];
  }
  if (!out) throw IoError("error while writing '" + path + "'");
  return summary;
}

inline std::vector<DatasetSample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset '" + path + "'");
  std::vector<DatasetSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(sample_from_json(j, "line " + std::to_string(lineno) + ": "));
  }
  return out;
}

}  // namespace latte
