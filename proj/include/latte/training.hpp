#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "latte/checkpoint.hpp"
#include "latte/error.hpp"
#include "latte/model.hpp"
#include "latte/optim.hpp"
#include "latte/oracle.hpp"
#include "latte/rng.hpp"

namespace latte {

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double lr = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"train_mse", train_mse}, {"val_mse", val_mse}, {"lr", lr}};
  }
};

struct TrainOptions {
  std::size_t epochs = 500;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  std::size_t warmup_epochs = 15;
  std::size_t warmup_steps = 0;  // > 0 switches to a per-step linear warmup
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  bool augment = false;
  AugmentationConfig augmentation;
  std::size_t max_steps = 0;  // 0: no limit
  double huber_delta = kDefaultHuberDelta;
  double input_noise = 0.1;  // std. dev. of Gaussian noise on the teacher-forced decoder input
  std::string metrics_path;
  std::string checkpoint_path;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
  double best_val_mse = std::numeric_limits<double>::infinity();
};

/// Seeded 90/10-style split of sample indices into (train, validation).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double val_fraction,
                                                                                   std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(mix_seed(seed, 0x5917));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_fraction));
  if (n_val >= n) n_val = n - 1;
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  return {train, val};
}

template <typename T>
void check_dataset(const LatteModel<T>& model, const std::vector<DatasetSample>& samples) {
  if (samples.empty()) throw PreconditionError("dataset is empty");
  const auto& c = model.config();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.lf.has_value() != c.lf_enabled) {
      throw SchemaError("sample " + std::to_string(i) + (c.lf_enabled ? " lacks the lf column required by this model"
                                                                       : " has an lf column but the model is not lf-enabled"));
    }
    if (s.original.size() != c.waypoints || s.modified.size() != c.waypoints) {
      throw SchemaError("sample " + std::to_string(i) + " has " + std::to_string(s.original.size()) +
                        " waypoints, model expects " + std::to_string(c.waypoints));
    }
    if (s.scene.size() > c.max_objects) {
      throw SchemaError("sample " + std::to_string(i) + " has more than " + std::to_string(c.max_objects) + " objects");
    }
  }
}

template <typename T>
std::vector<FeatureInputs> sample_features(const LatteModel<T>& model, const std::vector<DatasetSample>& samples) {
  std::vector<FeatureInputs> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.prepare_features(s.text, s.scene, s.lf));
  return out;
}

namespace detail {

template <typename T>
std::vector<ModelInput> model_inputs(const std::vector<const DatasetSample*>& samples,
                                     const std::vector<const FeatureInputs*>& features) {
  std::vector<ModelInput> inputs;
  inputs.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) inputs.push_back({samples[i]->original, samples[i]->scene, *features[i]});
  return inputs;
}

template <typename U>
std::vector<const U*> pointers(const std::vector<U>& v) {
  std::vector<const U*> out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(&x);
  return out;
}

inline double batch_mse_sum(std::span<const float> pred, const std::vector<const Trajectory*>& targets) {
  double total = 0.0;
  std::size_t off = 0;
  for (const auto* t : targets) {
    double s = 0.0;
    for (const auto& w : t->waypoints) {
      for (std::size_t k = 0; k < 4; ++k) {
        const double e = static_cast<double>(pred[off++]) - w[k];
        s += e * e;
      }
    }
    total += s / static_cast<double>(4 * t->size());
  }
  return total;
}

inline double batch_mse_sum(std::span<const double> pred, const std::vector<const Trajectory*>& targets) {
  double total = 0.0;
  std::size_t off = 0;
  for (const auto* t : targets) {
    double s = 0.0;
    for (const auto& w : t->waypoints) {
      for (std::size_t k = 0; k < 4; ++k) {
        const double e = pred[off++] - w[k];
        s += e * e;
      }
    }
    total += s / static_cast<double>(4 * t->size());
  }
  return total;
}

}  // namespace detail

/// Mean teacher-forced trajectory MSE over `indices` (all samples when empty).
template <typename T>
double teacher_forced_mse(const LatteModel<T>& model, const std::vector<DatasetSample>& samples,
                          const std::vector<FeatureInputs>& features, const std::vector<std::size_t>& indices,
                          std::size_t batch_size = 32) {
  if (indices.empty()) return 0.0;
  auto* saved = active_tape<T>();
  active_tape<T>() = nullptr;
  double total = 0.0;
  for (std::size_t b = 0; b < indices.size(); b += batch_size) {
    const std::size_t e = std::min(indices.size(), b + batch_size);
    std::vector<const DatasetSample*> ss;
    std::vector<const FeatureInputs*> ff;
    std::vector<const Trajectory*> targets;
    for (std::size_t i = b; i < e; ++i) {
      ss.push_back(&samples[indices[i]]);
      ff.push_back(&features[indices[i]]);
      targets.push_back(&samples[indices[i]].modified);
    }
    const auto inputs = detail::model_inputs<T>(ss, ff);
    const auto out = model.forward(model.make_batch(detail::pointers(inputs)), trajectories_tensor<T>(targets), false);
    total += detail::batch_mse_sum(out.prediction.data(), targets);
  }
  active_tape<T>() = saved;
  return total / static_cast<double>(indices.size());
}

/// Mean autoregressive trajectory MSE over `indices`.
template <typename T>
double autoregressive_mse(const LatteModel<T>& model, const std::vector<DatasetSample>& samples,
                          const std::vector<FeatureInputs>& features, const std::vector<std::size_t>& indices,
                          std::size_t batch_size = 32) {
  double total = 0.0;
  for (std::size_t b = 0; b < indices.size(); b += batch_size) {
    const std::size_t e = std::min(indices.size(), b + batch_size);
    std::vector<const DatasetSample*> ss;
    std::vector<const FeatureInputs*> ff;
    for (std::size_t i = b; i < e; ++i) {
      ss.push_back(&samples[indices[i]]);
      ff.push_back(&features[indices[i]]);
    }
    const auto inputs = detail::model_inputs<T>(ss, ff);
    const auto preds = model.generate(detail::pointers(inputs));
    for (std::size_t i = 0; i < preds.size(); ++i) total += trajectory_mse(preds[i], ss[i]->modified);
  }
  return indices.empty() ? 0.0 : total / static_cast<double>(indices.size());
}

/// Validation MSE under the same split `train` uses, e.g. to verify a
/// reloaded checkpoint.
template <typename T>
double validation_mse(const LatteModel<T>& model, const std::vector<DatasetSample>& samples, const TrainOptions& opts) {
  check_dataset(model, samples);
  const auto [train_idx, val_idx] = split_indices(samples.size(), opts.val_fraction, opts.seed);
  const auto features = sample_features(model, samples);
  return teacher_forced_mse(model, samples, features, val_idx.empty() ? train_idx : val_idx);
}

/// Adam with warmup, per-epoch metrics, best-validation weights restored at
/// the end and written to `checkpoint_path` when set.
template <typename T>
TrainResult train(LatteModel<T>& model, const std::vector<DatasetSample>& samples, const TrainOptions& opts) {
  check_dataset(model, samples);
  if (opts.batch_size == 0) throw PreconditionError("batch size must be >= 1");
  const auto [train_idx, val_idx] = split_indices(samples.size(), opts.val_fraction, opts.seed);
  const auto features = sample_features(model, samples);

  std::ofstream metrics;
  if (!opts.metrics_path.empty()) {
    metrics.open(opts.metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics to '" + opts.metrics_path + "'");
  }

  auto& params = model.parameters();
  Adam<T> adam(params);
  TrainResult result;
  std::vector<std::vector<T>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : params) best.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  };
  snapshot();

  std::vector<std::size_t> order = train_idx;
  bool stop = false;
  for (std::size_t epoch = 0; epoch < opts.epochs && !stop; ++epoch) {
    Rng shuffle(mix_seed(opts.seed, 0x100000 + epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);

    double lr = warmup_learning_rate(opts.learning_rate, epoch, opts.warmup_epochs);
    double train_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += opts.batch_size) {
      if (opts.max_steps && result.steps >= opts.max_steps) {
        stop = true;
        break;
      }
      const std::size_t e = std::min(order.size(), b + opts.batch_size);
      std::vector<DatasetSample> augmented;
      std::vector<const DatasetSample*> ss;
      std::vector<const FeatureInputs*> ff;
      if (opts.augment) {
        augmented.reserve(e - b);
        for (std::size_t i = b; i < e; ++i) {
          Rng rng(mix_seed(mix_seed(opts.seed, 0x200000 + epoch), order[i]));
          augmented.push_back(augment_geometric(samples[order[i]], rng, opts.augmentation));
        }
        for (const auto& s : augmented) ss.push_back(&s);
      } else {
        for (std::size_t i = b; i < e; ++i) ss.push_back(&samples[order[i]]);
      }
      std::vector<const Trajectory*> targets;
      for (std::size_t i = b; i < e; ++i) ff.push_back(&features[order[i]]);
      for (const auto* s : ss) targets.push_back(&s->modified);
      const auto inputs = detail::model_inputs<T>(ss, ff);

      if (opts.warmup_steps > 0) {
        lr = opts.learning_rate *
             std::min(1.0, static_cast<double>(result.steps + 1) / static_cast<double>(opts.warmup_steps));
      }
      const auto target_tensor = trajectories_tensor<T>(targets);
      std::optional<Tensor<T>> noisy;
      if (opts.input_noise > 0.0) {
        Rng rng(mix_seed(opts.seed, 0x300000 + result.steps));
        std::vector<T> v(target_tensor.data().begin(), target_tensor.data().end());
        for (auto& x : v) x = static_cast<T>(clamp_unit(static_cast<double>(x) + rng.normal(0.0, opts.input_noise)));
        noisy.emplace(target_tensor.shape(), std::move(v));
      }
      Tape<T> tape;
      {
        TapeScope<T> scope(tape);
        const auto out = model.forward(model.make_batch(detail::pointers(inputs)), target_tensor, true, nullptr,
                                       static_cast<T>(opts.huber_delta), noisy ? &*noisy : nullptr);
        if (!std::isfinite(static_cast<double>(out.loss.item()))) {
          throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
        }
        train_sum += detail::batch_mse_sum(out.prediction.data(), targets);
        seen += targets.size();
        tape.backward(out.loss);
      }
      adam.step(lr);
      ++result.steps;
    }
    if (seen == 0) break;

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_mse = train_sum / static_cast<double>(seen);
    m.val_mse = teacher_forced_mse(model, samples, features, val_idx.empty() ? train_idx : val_idx);
    result.history.push_back(m);
    if (metrics) metrics << m.to_json().dump() << '\n' << std::flush;
    if (m.val_mse < result.best_val_mse) {
      result.best_val_mse = m.val_mse;
      result.best_epoch = epoch;
      snapshot();
    }
    if (opts.on_epoch) opts.on_epoch(m);
  }

  for (std::size_t k = 0; k < params.size(); ++k) std::copy(best[k].begin(), best[k].end(), params[k].tensor.data().begin());
  if (!opts.checkpoint_path.empty()) {
    save_checkpoint(model, opts.checkpoint_path,
                    {result.best_epoch, result.best_val_mse, model.encoder().spec()});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct FamilyMetrics {
  std::size_t count = 0;
  double mse = 0.0;
};

struct EvalReport {
  std::size_t count = 0;
  double mse = 0.0;  // autoregressive, the headline metric
  std::optional<double> teacher_forced_mse;
  std::map<std::string, FamilyMetrics> families;

  nlohmann::json to_json() const {
    nlohmann::json fam = nlohmann::json::object();
    for (const auto& [k, v] : families) fam[k] = {{"count", v.count}, {"mse", v.mse}};
    nlohmann::json j = {{"count", count}, {"mse", mse}, {"families", fam}};
    if (teacher_forced_mse) j["teacher_forced_mse"] = *teacher_forced_mse;
    return j;
  }
};

/// MSE report of given predictions against the samples' ground truth.
inline EvalReport evaluate_predictions(const std::vector<DatasetSample>& samples, const std::vector<Trajectory>& predictions) {
  if (samples.size() != predictions.size()) {
    throw DimensionError("got " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(samples.size()) + " samples");
  }
  EvalReport r;
  r.count = samples.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double e = trajectory_mse(predictions[i], samples[i].modified);
    r.mse += e;
    auto& f = r.families[std::string(to_string(family_of(samples[i].intent.kind)))];
    ++f.count;
    f.mse += e;
  }
  if (r.count) r.mse /= static_cast<double>(r.count);
  for (auto& [k, f] : r.families) f.mse /= static_cast<double>(f.count);
  return r;
}

template <typename T>
std::vector<Trajectory> predict(const LatteModel<T>& model, const std::vector<DatasetSample>& samples,
                                std::size_t batch_size = 32) {
  const auto features = sample_features(model, samples);
  std::vector<Trajectory> out;
  out.reserve(samples.size());
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const std::size_t e = std::min(samples.size(), b + batch_size);
    std::vector<const DatasetSample*> ss;
    std::vector<const FeatureInputs*> ff;
    for (std::size_t i = b; i < e; ++i) {
      ss.push_back(&samples[i]);
      ff.push_back(&features[i]);
    }
    const auto inputs = detail::model_inputs<T>(ss, ff);
    for (auto& t : model.generate(detail::pointers(inputs))) out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
EvalReport evaluate(const LatteModel<T>& model, const std::vector<DatasetSample>& samples, std::size_t batch_size = 32) {
  check_dataset(model, samples);
  auto report = evaluate_predictions(samples, predict(model, samples, batch_size));
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  report.teacher_forced_mse = teacher_forced_mse(model, samples, sample_features(model, samples), all, batch_size);
  return report;
}

// ---------------------------------------------------------------------------
// Attention export

namespace detail {

inline nlohmann::json matrix_json(const std::vector<double>& m, std::size_t rows, std::size_t cols, double scale) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t r = 0; r < rows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < cols; ++c) row.push_back(m[r * cols + c] * scale);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace detail

/// Attention averaged over heads and samples, captured on a teacher-forced
/// pass that replays the model's own autoregressive outputs.
template <typename T>
AttentionMaps collect_attention(const LatteModel<T>& model, const std::vector<DatasetSample>& samples,
                                std::size_t batch_size = 32) {
  check_dataset(model, samples);
  const auto features = sample_features(model, samples);
  auto* saved = active_tape<T>();
  active_tape<T>() = nullptr;
  AttentionMaps maps;
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const std::size_t e = std::min(samples.size(), b + batch_size);
    std::vector<const DatasetSample*> ss;
    std::vector<const FeatureInputs*> ff;
    for (std::size_t i = b; i < e; ++i) {
      ss.push_back(&samples[i]);
      ff.push_back(&features[i]);
    }
    const auto inputs = detail::model_inputs<T>(ss, ff);
    const auto ptrs = detail::pointers(inputs);
    const auto generated = model.generate(ptrs);
    model.forward(model.make_batch(ptrs), trajectories_tensor<T>(detail::pointers(generated)), false, &maps);
  }
  active_tape<T>() = saved;
  return maps;
}

inline nlohmann::json attention_json(const AttentionMaps& maps, const ModelConfig& c) {
  const std::size_t n = c.waypoints, s = c.memory_tokens();
  const double inv = maps.samples ? 1.0 / static_cast<double>(maps.samples) : 0.0;
  nlohmann::json j = {{"samples", maps.samples}, {"waypoints", n}, {"objects", c.max_objects}};
  j["encoder"] = nlohmann::json::array();
  for (const auto& m : maps.encoder) j["encoder"].push_back(detail::matrix_json(m, s, s, inv));
  j["decoder_self"] = nlohmann::json::array();
  for (const auto& m : maps.decoder_self) j["decoder_self"].push_back(detail::matrix_json(m, n, n, inv));
  j["decoder_cross"] = nlohmann::json::array();
  for (const auto& m : maps.decoder_cross) j["decoder_cross"].push_back(detail::matrix_json(m, n, s + 1, inv));
  return j;
}

template <typename T>
nlohmann::json export_attention(const LatteModel<T>& model, const std::vector<DatasetSample>& samples,
                                const std::string& path = "") {
  const auto j = attention_json(collect_attention(model, samples), model.config());
  if (!path.empty()) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write attention maps to '" + path + "'");
    out << j.dump() << '\n';
  }
  return j;
}

}  // namespace latte
