#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "latte/checkpoint.hpp"
#include "latte/constraints.hpp"
#include "latte/error.hpp"
#include "latte/language.hpp"
#include "latte/oracle.hpp"
#include "latte/training.hpp"

namespace latte {

enum class Engine { oracle, model };

inline std::string_view to_string(Engine e) { return e == Engine::oracle ? "oracle" : "model"; }

inline Engine engine_from_string(const std::string& s, const std::string& path = "engine") {
  if (s == "oracle") return Engine::oracle;
  if (s == "model") return Engine::model;
  throw SchemaError("unknown engine '" + s + "' at " + path);
}

struct HistoryEntry {
  std::string text;        // command that produced the state after this entry
  std::optional<double> lf;
  Trajectory trajectory;   // state before the command was accepted
};

struct ReshapeResult {
  std::string text;
  std::optional<double> lf;
  Trajectory original;
  Trajectory modified;
  Trajectory clipped;
  std::vector<double> similarity;
  std::optional<nlohmann::json> attention;
  std::optional<ModificationIntent> intent;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"text", text},
                        {"original", to_json_value(original)},
                        {"modified", to_json_value(modified)},
                        {"clipped", to_json_value(clipped)},
                        {"similarity", similarity}};
    j["lf"] = lf ? nlohmann::json(*lf) : nlohmann::json();
    if (intent) j["intent"] = to_json_value(*intent);
    if (attention) j["attention"] = *attention;
    return j;
  }
};

inline ReshapeResult reshape_result_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError("expected an object at " + path);
  ReshapeResult r;
  r.text = j.value("text", std::string());
  if (j.contains("lf") && !j["lf"].is_null()) r.lf = j["lf"].get<double>();
  r.original = trajectory_from_json(j.at("original"), path + ".original");
  r.modified = trajectory_from_json(j.at("modified"), path + ".modified");
  r.clipped = trajectory_from_json(j.at("clipped"), path + ".clipped");
  r.similarity = j.at("similarity").get<std::vector<double>>();
  if (j.contains("intent")) r.intent = intent_from_json(j["intent"], path + ".intent");
  if (j.contains("attention")) r.attention = j["attention"];
  return r;
}

struct Session {
  std::string id;
  Engine engine = Engine::oracle;
  Scene scene;
  AdmissibleRegion region;
  Trajectory current;
  std::vector<HistoryEntry> history;
  std::optional<ReshapeResult> pending;

  nlohmann::json to_json() const {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : history) {
      hist.push_back({{"text", h.text},
                      {"lf", h.lf ? nlohmann::json(*h.lf) : nlohmann::json()},
                      {"trajectory", to_json_value(h.trajectory)}});
    }
    return {{"id", id},
            {"engine", std::string(to_string(engine))},
            {"scene", to_json_value(scene)},
            {"region", to_json_value(region)},
            {"current", to_json_value(current)},
            {"history", hist},
            {"history_depth", history.size()},
            {"pending", pending ? pending->to_json() : nlohmann::json()}};
  }

  static Session from_json(const nlohmann::json& j) {
    Session s;
    s.id = j.at("id").get<std::string>();
    s.engine = engine_from_string(j.at("engine").get<std::string>());
    s.scene = scene_from_json(j.at("scene"), "scene");
    s.region = region_from_json(j.at("region"));
    s.current = trajectory_from_json(j.at("current"), "current");
    for (const auto& h : j.at("history")) {
      HistoryEntry e;
      e.text = h.at("text").get<std::string>();
      if (!h.at("lf").is_null()) e.lf = h["lf"].get<double>();
      e.trajectory = trajectory_from_json(h.at("trajectory"), "history.trajectory");
      s.history.push_back(std::move(e));
    }
    if (j.contains("pending") && !j["pending"].is_null()) s.pending = reshape_result_from_json(j["pending"], "pending");
    return s;
  }
};

struct ServiceOptions {
  std::string checkpoint;          // empty: no model, oracle engine only
  std::string encoder = "";        // empty: the encoder recorded in the checkpoint
  std::uint64_t seed = 0;
  std::string snapshot_path;       // sessions are restored from / saved to this file
  RaycastConfig raycast;
};

/// Session store and the reshape / accept / undo state machine. Requests on
/// different sessions run concurrently; requests on one session are
/// serialized.
class SessionService {
 public:
  explicit SessionService(ServiceOptions opts = {}) : opts_(std::move(opts)) {
    if (!opts_.checkpoint.empty()) {
      std::optional<TextEncoder> enc;
      if (!opts_.encoder.empty()) enc = TextEncoder::from_spec(opts_.encoder);
      model_ = std::make_shared<const LatteModel<float>>(load_model<float>(opts_.checkpoint, enc, &meta_));
    }
    if (!opts_.snapshot_path.empty()) restore(opts_.snapshot_path);
  }

  bool has_model() const noexcept { return model_ != nullptr; }
  const LatteModel<float>* model() const noexcept { return model_.get(); }

  std::size_t waypoints() const { return model_ ? model_->config().waypoints : kDefaultWaypoints; }
  std::size_t max_objects() const { return model_ ? model_->config().max_objects : kDefaultMaxObjects; }

  nlohmann::json health() const {
    nlohmann::json j = {{"status", "ok"}, {"sessions", session_count()}};
    if (model_) {
      j["checkpoint"] = {{"path", opts_.checkpoint}, {"epoch", meta_.epoch}, {"best_val_mse", meta_.best_val_mse},
                         {"encoder", model_->encoder().spec()}};
      j["config"] = model_->config().to_json();
      j["lf_enabled"] = model_->config().lf_enabled;
    } else {
      j["checkpoint"] = nullptr;
      j["config"] = nullptr;
      j["lf_enabled"] = true;
    }
    j["engines"] = model_ ? nlohmann::json::array({"oracle", "model"}) : nlohmann::json::array({"oracle"});
    return j;
  }

  /// {scene, trajectory?, region?, engine?}
  nlohmann::json create(const nlohmann::json& body) {
    if (!body.is_object()) throw SchemaError("expected an object at body");
    Session s;
    s.engine = model_ ? Engine::model : Engine::oracle;
    if (body.contains("engine")) {
      if (!body["engine"].is_string()) throw SchemaError("expected a string at engine");
      s.engine = engine_from_string(body["engine"].get<std::string>());
    }
    if (s.engine == Engine::model && !model_) throw ConflictError("engine 'model' requested but no checkpoint is loaded");
    if (!body.contains("scene")) throw SchemaError("missing field at scene");
    s.scene = scene_from_json(body["scene"], "scene");
    s.scene.validate(max_objects());
    if (body.contains("region")) s.region = region_from_json(body["region"], "region");
    std::uint64_t index;
    {
      std::lock_guard lock(mutex_);
      index = next_id_++;
    }
    if (body.contains("trajectory")) {
      s.current = trajectory_from_json(body["trajectory"], "trajectory");
    } else {
      s.current = random_walk_spline(mix_seed(opts_.seed, index), 6, waypoints());
    }
    if (s.current.size() < 2) throw SchemaError("trajectory needs at least two waypoints at trajectory");
    for (std::size_t i = 0; i < s.current.size(); ++i) {
      if (!is_admissible(s.current[i].position(), s.region)) {
        throw PreconditionError("trajectory waypoint " + std::to_string(i) + " is not admissible");
      }
    }
    s.id = "s" + std::to_string(index);
    auto slot = std::make_shared<Slot>();
    slot->session = std::move(s);
    const auto j = slot->session.to_json();
    std::lock_guard lock(mutex_);
    sessions_[slot->session.id] = slot;
    return j;
  }

  nlohmann::json get(const std::string& id) const {
    auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    return slot->session.to_json();
  }

  /// {text, lf?, accept?}; the preview is kept pending until accepted.
  nlohmann::json reshape(const std::string& id, const nlohmann::json& body, bool with_attention = false) {
    if (!body.is_object()) throw SchemaError("expected an object at body");
    if (!body.contains("text") || !body["text"].is_string()) throw SchemaError("expected a string at text");
    const auto text = body["text"].get<std::string>();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw PreconditionError("command text is empty");
    std::optional<double> lf;
    if (body.contains("lf") && !body["lf"].is_null()) {
      if (!body["lf"].is_number()) throw SchemaError("expected a number at lf");
      lf = body["lf"].get<double>();
      if (!(*lf >= 0.0 && *lf <= 1.0)) throw SchemaError("locality factor must lie in [0, 1] at lf");
    }
    bool accept_now = false;
    if (body.contains("accept")) {
      if (!body["accept"].is_boolean()) throw SchemaError("expected a boolean at accept");
      accept_now = body["accept"].get<bool>();
    }
    auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    auto& s = slot->session;
    auto result = compute(s, text, lf, with_attention);
    s.pending = result;
    nlohmann::json j = result.to_json();
    if (accept_now) accept_locked(s);
    j["accepted"] = accept_now;
    j["history_depth"] = s.history.size();
    return j;
  }

  nlohmann::json accept(const std::string& id) {
    auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    accept_locked(slot->session);
    return slot->session.to_json();
  }

  nlohmann::json undo(const std::string& id) {
    auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    auto& s = slot->session;
    if (s.history.empty()) throw ConflictError("nothing to undo in session " + id);
    s.current = s.history.back().trajectory;
    s.history.pop_back();
    s.pending.reset();
    return s.to_json();
  }

  std::size_t session_count() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
  }

  nlohmann::json snapshot() const {
    std::lock_guard lock(mutex_);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [id, slot] : sessions_) {
      std::lock_guard slock(slot->mutex);
      arr.push_back(slot->session.to_json());
    }
    return {{"next_id", next_id_}, {"sessions", arr}};
  }

  void save_snapshot(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write snapshot '" + path + "'");
    out << snapshot().dump() << '\n';
  }

  void save_snapshot() const {
    if (!opts_.snapshot_path.empty()) save_snapshot(opts_.snapshot_path);
  }

 private:
  struct Slot {
    mutable std::mutex mutex;
    Session session;
  };

  std::shared_ptr<Slot> find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
    return it->second;
  }

  void restore(const std::string& path) {
    std::ifstream in(path);
    if (!in) return;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("corrupt snapshot: ") + e.what());
    }
    next_id_ = j.value("next_id", std::uint64_t{0});
    for (const auto& sj : j.at("sessions")) {
      auto slot = std::make_shared<Slot>();
      slot->session = Session::from_json(sj);
      if (slot->session.engine == Engine::model && !model_) slot->session.engine = Engine::oracle;
      sessions_[slot->session.id] = slot;
    }
  }

  void accept_locked(Session& s) {
    if (!s.pending) throw ConflictError("no pending preview to accept in session " + s.id);
    s.history.push_back({s.pending->text, s.pending->lf, s.current});
    s.current = s.pending->clipped;
    s.pending.reset();
  }

  ReshapeResult compute(const Session& s, const std::string& text, std::optional<double> lf, bool with_attention) const {
    ReshapeResult r;
    r.text = text;
    r.original = s.current;
    if (s.engine == Engine::oracle) {
      const double l = lf.value_or(kDefaultLocality);
      r.lf = l;
      const auto intent = parse_intent(text, &s.scene, l);
      r.intent = intent;
      r.modified = oracle_reshape(s.current, intent, s.scene);
      r.similarity = object_similarity(TextEncoder::default_encoder(), text, s.scene, max_objects());
    } else {
      const auto& m = *model_;
      if (m.config().lf_enabled) {
        r.lf = lf.value_or(kDefaultLocality);
      } else if (lf) {
        throw SchemaError("the loaded model takes no locality factor at lf");
      }
      ModelInput in{s.current, s.scene, m.prepare_features(text, s.scene, r.lf)};
      r.similarity = in.features.similarity;
      r.modified = m.generate(in);
      if (with_attention) {
        AttentionMaps maps;
        const std::vector<const Trajectory*> own{&r.modified};
        m.forward(m.make_batch({&in}), trajectories_tensor<float>(own), false, &maps);
        r.attention = attention_json(maps, m.config());
      }
    }
    r.clipped = project_trajectory(s.current, r.modified, s.region, opts_.raycast);
    return r;
  }

  ServiceOptions opts_;
  std::shared_ptr<const LatteModel<float>> model_;
  CheckpointMetadata meta_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::uint64_t next_id_ = 0;
};

}  // namespace latte
