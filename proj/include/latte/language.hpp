#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "latte/error.hpp"
#include "latte/geometry.hpp"
#include "latte/intent.hpp"
#include "latte/labels.hpp"

namespace latte {

/// Lowercased tokens split on whitespace and punctuation.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace detail {

inline constexpr std::string_view kFillerWords =
    "i you he she it we they me him her us them my your his its our their this that these those "
    "is are was were be been being have has had do does did will would can could should may might "
    "must shall not no yes and or but if then than so because as at by for with about against "
    "between into through during before after above below over under again once here there where "
    "why how all any both each few most other some such only own same too just now also please "
    "robot arm drone path route trajectory way object thing make take get put let give come see "
    "look turn avoid follow reach fly run carry hold bring start stop end point area region space "
    "room floor wall ground air side corner center middle edge line goal target place position "
    "fast slow quick quickly slowly carefully gently safe safely far high low long short big small "
    "large tiny new old good bad first last next time moment bit careful smooth smoothly straight "
    "around along toward towards across behind beside beyond inside outside within without near "
    "close nearer farther lower higher slightly really quite rather somewhat extremely totally "
    "again always never sometimes often okay ok hey now very";

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

/// Fixed vocabulary: out-of-vocabulary token, grammar words, object-label
/// words and common fillers, in that order.
class Vocabulary {
 public:
  static constexpr std::size_t kOov = 0;

  static const Vocabulary& builtin() {
    static const Vocabulary vocab = [] {
      Vocabulary v;
      v.add("<oov>");
      for (const auto& w : grammar::words()) v.add(w);
      for (const auto label : kObjectLabels) {
        for (const auto& w : tokenize(label)) v.add(w);
      }
      for (const auto& w : tokenize(detail::kFillerWords)) v.add(w);
      return v;
    }();
    return vocab;
  }

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& word(std::size_t i) const { return words_.at(i); }

  std::size_t index(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? kOov : it->second;
  }

  std::vector<std::size_t> encode(std::string_view text) const {
    std::vector<std::size_t> ids;
    for (const auto& t : tokenize(text)) ids.push_back(index(t));
    return ids;
  }

  /// Stable identifier stored in checkpoints.
  std::uint64_t fingerprint() const {
    std::uint64_t h = detail::fnv1a("vocab");
    for (const auto& w : words_) h = h * 31 + detail::fnv1a(w);
    return h;
  }

 private:
  void add(const std::string& w) {
    if (index_.emplace(w, words_.size()).second) words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("cosine: embedding sizes differ");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw NumericError("cosine similarity of a zero-norm embedding");
  return ab / std::sqrt(aa * bb);
}

/// Precomputed embeddings keyed by exact text, read from JSON lines
/// {"text": str, "embedding": [reals]}.
class EmbeddingStore {
 public:
  static EmbeddingStore load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read embedding file '" + path + "'");
    EmbeddingStore store;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto where = path + ":" + std::to_string(lineno);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error&) {
        throw SchemaError("malformed JSON at " + where);
      }
      if (!j.contains("text") || !j["text"].is_string() || !j.contains("embedding") || !j["embedding"].is_array()) {
        throw SchemaError("expected {text, embedding} at " + where);
      }
      std::vector<double> e;
      for (const auto& v : j["embedding"]) {
        if (!v.is_number()) throw SchemaError("non-numeric embedding entry at " + where);
        e.push_back(v.get<double>());
      }
      if (store.dim_ == 0) store.dim_ = e.size();
      if (e.size() != store.dim_ || e.empty()) throw SchemaError("embedding width mismatch at " + where);
      store.table_[j["text"].get<std::string>()] = std::move(e);
    }
    if (store.table_.empty()) throw SchemaError("embedding file '" + path + "' is empty");
    return store;
  }

  void insert(const std::string& text, std::vector<double> e) {
    if (dim_ == 0) dim_ = e.size();
    if (e.size() != dim_) throw DimensionError("embedding width mismatch for '" + text + "'");
    table_[text] = std::move(e);
  }

  const std::vector<double>& at(const std::string& text) const {
    const auto it = table_.find(text);
    if (it == table_.end()) throw LookupError("no imported embedding for text '" + text + "'");
    return it->second;
  }

  bool contains(const std::string& text) const { return table_.count(text) != 0; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return table_.size(); }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> table_;
};

/// Text encoder plugin. In the default mode the semantic features are the
/// mean of trainable token vectors (the table is owned by the model) and
/// object grounding uses a frozen hashed bag-of-words embedding. In import
/// mode both come from an embedding file.
class TextEncoder {
 public:
  enum class Mode { default_trainable, file_import };
  static constexpr std::size_t kLabelDim = 4096;

  static TextEncoder default_encoder() { return TextEncoder{}; }

  static TextEncoder from_store(EmbeddingStore store, std::string source = "") {
    TextEncoder e;
    e.mode_ = Mode::file_import;
    e.store_ = std::make_shared<const EmbeddingStore>(std::move(store));
    e.source_ = std::move(source);
    return e;
  }

  /// "default" or "import:<path>".
  static TextEncoder from_spec(const std::string& spec) {
    if (spec.empty() || spec == "default") return default_encoder();
    constexpr std::string_view prefix = "import:";
    if (spec.rfind(prefix, 0) == 0) {
      const std::string path = spec.substr(prefix.size());
      return from_store(EmbeddingStore::load(path), path);
    }
    throw SchemaError("unknown encoder '" + spec + "' (expected default or import:<path>)");
  }

  Mode mode() const noexcept { return mode_; }
  bool trainable() const noexcept { return mode_ == Mode::default_trainable; }
  std::string spec() const { return trainable() ? "default" : "import:" + source_; }

  /// Width of imported semantic features (0 in default mode).
  std::size_t imported_dim() const { return store_ ? store_->dim() : 0; }

  std::vector<std::size_t> token_ids(std::string_view text) const {
    auto ids = Vocabulary::builtin().encode(text);
    if (ids.empty()) throw PreconditionError("cannot encode empty text");
    return ids;
  }

  const std::vector<double>& imported(const std::string& text) const {
    if (!store_) throw Error("encoder_mode", "encoder is not in import mode");
    return store_->at(text);
  }

  /// Embedding used for object grounding (cosine similarity).
  std::vector<double> label_embedding(const std::string& text) const {
    if (store_) return store_->at(text);
    std::vector<double> e(kLabelDim, 0.0);
    for (const auto& t : tokenize(text)) e[detail::fnv1a(t) % kLabelDim] = 1.0;
    return e;
  }

 private:
  Mode mode_ = Mode::default_trainable;
  std::shared_ptr<const EmbeddingStore> store_;
  std::string source_;
};

/// s_i = cosine(text, name_i), zero-padded to `max_objects`.
inline std::vector<double> object_similarity(const TextEncoder& enc, const std::string& text,
                                             const Scene& scene, std::size_t max_objects) {
  if (scene.size() > max_objects) {
    throw PreconditionError("scene has " + std::to_string(scene.size()) + " objects, at most " +
                            std::to_string(max_objects) + " allowed");
  }
  std::vector<double> s(max_objects, 0.0);
  if (scene.size() == 0) return s;
  const auto text_emb = enc.label_embedding(text);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    s[i] = cosine_similarity(text_emb, enc.label_embedding(scene.objects[i].name));
  }
  return s;
}

/// Layout of q_F = [s (max_objects) | semantic (semantic_dim) | lf (0 or 1)].
struct FeatureLayout {
  std::size_t max_objects = kDefaultMaxObjects;
  std::size_t semantic_dim = 64;
  bool lf_enabled = false;

  std::size_t size() const { return max_objects + semantic_dim + (lf_enabled ? 1 : 0); }
  std::string tag() const {
    return "s" + std::to_string(max_objects) + "|sem" + std::to_string(semantic_dim) + "|lf" +
           (lf_enabled ? "1" : "0") + "|v1";
  }
};

/// Everything needed to materialize q_F for one command. In default mode the
/// semantic part is held as token ids so it stays differentiable.
struct FeatureInputs {
  std::vector<double> similarity;
  std::vector<std::size_t> token_ids;
  std::vector<double> semantic;
  std::optional<double> lf;
};

inline FeatureInputs prepare_features(const TextEncoder& enc, const std::string& text,
                                      const Scene& scene, std::optional<double> lf,
                                      const FeatureLayout& layout) {
  if (text.empty()) throw PreconditionError("empty command text");
  if (lf.has_value() != layout.lf_enabled) {
    throw SchemaError(layout.lf_enabled ? "this model needs a locality factor"
                                        : "this model takes no locality factor");
  }
  if (lf && !(*lf >= 0.0 && *lf <= 1.0)) throw SchemaError("locality factor must lie in [0, 1]");
  FeatureInputs f;
  f.similarity = object_similarity(enc, text, scene, layout.max_objects);
  if (enc.trainable()) {
    f.token_ids = enc.token_ids(text);
  } else {
    f.semantic = enc.imported(text);
    if (f.semantic.size() != layout.semantic_dim) {
      throw DimensionError("imported embedding width " + std::to_string(f.semantic.size()) +
                           " does not match the model's " + std::to_string(layout.semantic_dim));
    }
  }
  f.lf = lf;
  return f;
}

// ---------------------------------------------------------------------------
// Command parsing (inverse of render_text)

namespace detail {

enum class AnchorRole { closer, further, local };

struct Anchor {
  std::vector<std::string> tokens;
  AnchorRole role;
};

inline const std::vector<Anchor>& anchors() {
  static const std::vector<Anchor> list = [] {
    std::vector<Anchor> a;
    auto add = [&](std::string_view phrase, AnchorRole role) { a.push_back({tokenize(phrase), role}); };
    add(grammar::kKeepCloser, AnchorRole::closer);
    add(grammar::kKeepFurther, AnchorRole::further);
    add("smaller distance from", AnchorRole::closer);
    add("bigger distance from", AnchorRole::further);
    add(grammar::kCloser, AnchorRole::closer);
    add(grammar::kFurther, AnchorRole::further);
    add("further from", AnchorRole::further);
    add("away from", AnchorRole::further);
    for (const auto ctx : grammar::kLocalContexts) add(ctx, AnchorRole::local);
    add(grammar::kLocalSpeedContext, AnchorRole::local);
    add("near", AnchorRole::local);
    add("nearby", AnchorRole::local);
    std::stable_sort(a.begin(), a.end(), [](const Anchor& x, const Anchor& y) { return x.tokens.size() > y.tokens.size(); });
    return a;
  }();
  return list;
}

inline std::string join(const std::vector<std::string>& toks, std::size_t b, std::size_t e) {
  std::string out;
  for (std::size_t i = b; i < e; ++i) {
    if (i > b) out.push_back(' ');
    out += toks[i];
  }
  return out;
}

inline bool contains_token(const std::vector<std::string>& toks, std::size_t end, std::string_view w) {
  return std::find(toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(end), w) !=
         toks.begin() + static_cast<std::ptrdiff_t>(end);
}

inline double parse_intensity(const std::vector<std::string>& toks, std::size_t end) {
  for (std::size_t i = 0; i < end; ++i) {
    if (toks[i] == "very" || toks[i] == "much") return kIntensityVery;
    if (toks[i] == "a" && i + 1 < end) {
      if (toks[i + 1] == "lot") return kIntensityVery;
      if (toks[i + 1] == "bit" || toks[i + 1] == "little") return kIntensityBit;
    }
  }
  return kIntensityDefault;
}

}  // namespace detail

/// Parses a templated command into an intent. Targets are resolved by
/// longest token match against `scene` names when a scene is given, else
/// against the bundled label list. The locality factor is not part of the
/// text and is set to `lf`.
inline ModificationIntent parse_intent(const std::string& text, const Scene* scene = nullptr,
                                       double lf = kDefaultLocality) {
  const auto toks = tokenize(text);
  if (toks.empty()) throw ParseError("empty command", text);

  // Object anchor: earliest position, longest phrase.
  std::optional<detail::AnchorRole> role;
  std::size_t anchor_begin = toks.size(), rest_begin = toks.size();
  for (std::size_t pos = 0; pos < toks.size() && !role; ++pos) {
    for (const auto& a : detail::anchors()) {
      if (pos + a.tokens.size() > toks.size()) continue;
      if (!std::equal(a.tokens.begin(), a.tokens.end(), toks.begin() + static_cast<std::ptrdiff_t>(pos))) continue;
      role = a.role;
      anchor_begin = pos;
      rest_begin = pos + a.tokens.size();
      if (rest_begin < toks.size() && toks[rest_begin] == "the") ++rest_begin;
      break;
    }
  }
  const std::size_t head_end = anchor_begin;

  ModificationIntent intent;
  intent.locality_factor = lf;
  intent.intensity = detail::parse_intensity(toks, head_end);

  const bool faster = detail::contains_token(toks, head_end, "faster") ||
                      detail::contains_token(toks, head_end, "quicker") ||
                      detail::contains_token(toks, head_end, "increase");
  const bool slower = detail::contains_token(toks, head_end, "slower") ||
                      detail::contains_token(toks, head_end, "decrease") ||
                      detail::contains_token(toks, head_end, "reduce");
  const bool speed_noun = detail::contains_token(toks, head_end, "speed") ||
                          detail::contains_token(toks, head_end, "velocity");

  if (faster || slower || speed_noun) {
    if (faster == slower) throw ParseError("speed command without a clear faster/slower", detail::join(toks, 0, head_end));
    intent.polarity = faster ? Polarity::faster : Polarity::slower;
    if (!role) {
      intent.kind = IntentKind::speed_global;
    } else if (*role == detail::AnchorRole::local) {
      intent.kind = IntentKind::speed_local;
    } else {
      throw ParseError("speed command with a distance phrase", detail::join(toks, anchor_begin, toks.size()));
    }
  } else if (role && *role != detail::AnchorRole::local) {
    intent.kind = IntentKind::distance;
    intent.polarity = *role == detail::AnchorRole::closer ? Polarity::closer : Polarity::further;
  } else if (role) {
    throw ParseError("object phrase without a speed or distance change", detail::join(toks, 0, head_end));
  } else {
    std::optional<Direction> dir;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      const auto& t = toks[i];
      std::optional<Direction> d;
      if (t == "left") d = Direction::left;
      else if (t == "right") d = Direction::right;
      else if (t == "front" || t == "forward") d = Direction::front;
      else if (t == "back" || t == "backward" || t == "backwards") d = Direction::back;
      else if (t == "top" || t == "up" || t == "upper" || t == "higher") d = Direction::up;
      else if (t == "bottom" || t == "down" || t == "lower") d = Direction::down;
      if (d) {
        if (dir && *dir != *d) throw ParseError("conflicting directions", detail::join(toks, 0, toks.size()));
        dir = d;
      }
    }
    if (!dir) throw ParseError("no direction, distance or speed change recognized", text);
    intent.kind = IntentKind::cartesian;
    intent.direction = dir;
    return intent;
  }

  if (intent.kind == IntentKind::speed_global) return intent;

  // Target resolution.
  if (rest_begin >= toks.size()) throw ParseError("missing object name", detail::join(toks, anchor_begin, toks.size()));
  const std::vector<std::string> rest(toks.begin() + static_cast<std::ptrdiff_t>(rest_begin), toks.end());
  std::vector<std::string> candidates;
  if (scene != nullptr) {
    candidates = scene->names();
  } else {
    for (const auto l : kObjectLabels) candidates.emplace_back(l);
  }
  const std::string* best = nullptr;
  std::size_t best_len = 0;
  for (const auto& c : candidates) {
    const auto ct = tokenize(c);
    if (ct.empty() || ct.size() > rest.size() || ct.size() <= best_len) continue;
    if (std::equal(ct.begin(), ct.end(), rest.begin())) {
      best = &c;
      best_len = ct.size();
    }
  }
  if (best != nullptr) {
    intent.target = *best;
  } else if (scene != nullptr) {
    throw ResolutionError("no object named '" + detail::join(rest, 0, rest.size()) + "' in the scene");
  } else {
    intent.target = detail::join(rest, 0, rest.size());
  }
  return intent;
}

}  // namespace latte
