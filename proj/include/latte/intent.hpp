#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "latte/error.hpp"
#include "latte/geometry.hpp"

namespace latte {

enum class IntentKind { cartesian, distance, speed_global, speed_local };
enum class Direction { left, right, up, down, front, back };
enum class Polarity { none, closer, further, faster, slower };

/// Families in the order used when sampling intents; speed covers both the
/// global and the object-local variant.
enum class IntentFamily { cartesian, distance, speed };

inline constexpr double kIntensityVery = 1.5;
inline constexpr double kIntensityDefault = 1.0;
inline constexpr double kIntensityBit = 0.7;
inline constexpr std::array<double, 3> kIntensities = {kIntensityBit, kIntensityDefault, kIntensityVery};

inline constexpr double kDefaultLocality = 0.5;

inline std::string_view to_string(IntentKind k) {
  switch (k) {
    case IntentKind::cartesian: return "cartesian";
    case IntentKind::distance: return "distance";
    case IntentKind::speed_global: return "speed_global";
    case IntentKind::speed_local: return "speed_local";
  }
  return "?";
}

inline std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::left: return "left";
    case Direction::right: return "right";
    case Direction::up: return "up";
    case Direction::down: return "down";
    case Direction::front: return "front";
    case Direction::back: return "back";
  }
  return "?";
}

inline std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::none: return "none";
    case Polarity::closer: return "closer";
    case Polarity::further: return "further";
    case Polarity::faster: return "faster";
    case Polarity::slower: return "slower";
  }
  return "?";
}

inline IntentFamily family_of(IntentKind k) {
  switch (k) {
    case IntentKind::cartesian: return IntentFamily::cartesian;
    case IntentKind::distance: return IntentFamily::distance;
    default: return IntentFamily::speed;
  }
}

inline std::string_view to_string(IntentFamily f) {
  switch (f) {
    case IntentFamily::cartesian: return "cartesian";
    case IntentFamily::distance: return "distance";
    case IntentFamily::speed: return "speed";
  }
  return "?";
}

/// Axis convention: +x front, +y left, +z up.
inline Vec3 direction_vector(Direction d) {
  switch (d) {
    case Direction::front: return {1, 0, 0};
    case Direction::back: return {-1, 0, 0};
    case Direction::left: return {0, 1, 0};
    case Direction::right: return {0, -1, 0};
    case Direction::up: return {0, 0, 1};
    case Direction::down: return {0, 0, -1};
  }
  return {0, 0, 0};
}

/// Structured semantics of a command.
struct ModificationIntent {
  IntentKind kind = IntentKind::cartesian;
  std::optional<Direction> direction;
  Polarity polarity = Polarity::none;
  double intensity = kIntensityDefault;
  std::optional<std::string> target;
  double locality_factor = kDefaultLocality;

  bool operator==(const ModificationIntent&) const = default;

  /// Equality ignoring the locality factor, which text does not carry.
  bool same_command(const ModificationIntent& o) const {
    return kind == o.kind && direction == o.direction && polarity == o.polarity &&
           intensity == o.intensity && target == o.target;
  }

  bool needs_target() const { return kind == IntentKind::distance || kind == IntentKind::speed_local; }

  void validate() const {
    bool known_intensity = false;
    for (double i : kIntensities) known_intensity = known_intensity || i == intensity;
    if (!known_intensity) throw SchemaError("intensity must be one of 0.7, 1.0, 1.5");
    if (!(locality_factor >= 0.0 && locality_factor <= 1.0)) {
      throw SchemaError("locality factor must lie in [0, 1]");
    }
    switch (kind) {
      case IntentKind::cartesian:
        if (!direction || polarity != Polarity::none) throw SchemaError("cartesian intent needs a direction only");
        break;
      case IntentKind::distance:
        if (polarity != Polarity::closer && polarity != Polarity::further) {
          throw SchemaError("distance intent needs closer/further");
        }
        break;
      case IntentKind::speed_global:
      case IntentKind::speed_local:
        if (polarity != Polarity::faster && polarity != Polarity::slower) {
          throw SchemaError("speed intent needs faster/slower");
        }
        break;
    }
    if (needs_target() != target.has_value()) {
      throw SchemaError(std::string("intent kind ") + std::string(to_string(kind)) +
                        (needs_target() ? " requires" : " takes no") + " target");
    }
    if (kind != IntentKind::cartesian && direction) throw SchemaError("only cartesian intents carry a direction");
  }

  void validate(const Scene& scene) const {
    validate();
    if (target && scene.find(*target) == nullptr) {
      throw ResolutionError("target '" + *target + "' is not an object of the scene");
    }
  }
};

namespace grammar {

inline constexpr std::array<std::string_view, 3> kVeryWords = {"very", "much", "a lot"};
inline constexpr std::array<std::string_view, 2> kBitWords = {"a bit", "a little"};
inline constexpr std::array<std::string_view, 4> kMoveVerbs = {"go", "move", "walk", "drive"};
inline constexpr std::array<std::string_view, 5> kDistanceVerbs = {"pass", "drive", "walk", "go", "stay"};
inline constexpr std::array<std::string_view, 2> kStayVerbs = {"stay", "keep"};
inline constexpr std::array<std::string_view, 5> kLocalContexts = {
    "when passing near", "while passing nearby", "when passing in the proximity of",
    "when passing in the surrounding of", "when next to"};
inline constexpr std::string_view kCloser = "closer to";
inline constexpr std::string_view kFurther = "further away from";
inline constexpr std::string_view kKeepCloser = "keep a smaller distance from";
inline constexpr std::string_view kKeepFurther = "keep a bigger distance from";
inline constexpr std::array<std::string_view, 2> kSpeedNouns = {"speed", "velocity"};
inline constexpr std::array<std::string_view, 1> kIncreaseVerbs = {"increase"};
inline constexpr std::array<std::string_view, 2> kDecreaseVerbs = {"decrease", "reduce"};
inline constexpr std::string_view kLocalSpeedContext = "in the proximity of";

inline std::vector<std::string_view> direction_words(Direction d) {
  switch (d) {
    case Direction::left: return {"left", "left side"};
    case Direction::right: return {"right", "right side"};
    case Direction::front: return {"front"};
    case Direction::back: return {"back"};
    case Direction::up: return {"top", "upper part"};
    case Direction::down: return {"bottom", "bottom part"};
  }
  return {};
}

/// Every word the templates can emit, excluding object names.
inline std::vector<std::string> words() {
  const char* text =
      "very much a lot bit little go move walk drive pass stay keep when passing near while nearby "
      "in the proximity of surrounding next to closer further away from smaller bigger distance "
      "speed velocity increase decrease reduce more on left right front back top upper part bottom "
      "side faster slower up down";
  std::vector<std::string> out;
  std::string cur;
  for (const char* c = text;; ++c) {
    if (*c == ' ' || *c == '\0') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
      if (*c == '\0') break;
    } else {
      cur.push_back(*c);
    }
  }
  return out;
}

}  // namespace grammar

// ---------------------------------------------------------------------------
// JSON: {"kind": str, "direction": str?, "polarity": str?, "intensity": num,
// "target": str?}

inline nlohmann::json to_json_value(const ModificationIntent& i) {
  nlohmann::json j = {{"kind", std::string(to_string(i.kind))}, {"intensity", i.intensity}};
  if (i.direction) j["direction"] = std::string(to_string(*i.direction));
  if (i.polarity != Polarity::none) j["polarity"] = std::string(to_string(i.polarity));
  if (i.target) j["target"] = *i.target;
  return j;
}

inline ModificationIntent intent_from_json(const nlohmann::json& j, const std::string& path = "intent") {
  if (!j.is_object()) throw SchemaError("expected an object at " + path);
  auto str = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key)) return std::nullopt;
    if (!j[key].is_string()) throw SchemaError("expected a string at " + path + "." + key);
    return j[key].get<std::string>();
  };
  ModificationIntent i;
  const auto kind = str("kind");
  if (!kind) throw SchemaError("missing " + path + ".kind");
  if (*kind == "cartesian") i.kind = IntentKind::cartesian;
  else if (*kind == "distance") i.kind = IntentKind::distance;
  else if (*kind == "speed_global") i.kind = IntentKind::speed_global;
  else if (*kind == "speed_local") i.kind = IntentKind::speed_local;
  else throw SchemaError("unknown intent kind at " + path + ".kind");
  if (const auto d = str("direction")) {
    bool found = false;
    for (auto dir : {Direction::left, Direction::right, Direction::up, Direction::down,
                     Direction::front, Direction::back}) {
      if (*d == to_string(dir)) {
        i.direction = dir;
        found = true;
      }
    }
    if (!found) throw SchemaError("unknown direction at " + path + ".direction");
  }
  if (const auto p = str("polarity")) {
    bool found = false;
    for (auto pol : {Polarity::closer, Polarity::further, Polarity::faster, Polarity::slower}) {
      if (*p == to_string(pol)) {
        i.polarity = pol;
        found = true;
      }
    }
    if (!found) throw SchemaError("unknown polarity at " + path + ".polarity");
  }
  if (!j.contains("intensity") || !j["intensity"].is_number()) {
    throw SchemaError("expected a number at " + path + ".intensity");
  }
  i.intensity = j["intensity"].get<double>();
  i.target = str("target");
  i.validate();
  return i;
}

}  // namespace latte
