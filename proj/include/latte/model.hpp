#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "latte/error.hpp"
#include "latte/geometry.hpp"
#include "latte/language.hpp"
#include "latte/ops.hpp"
#include "latte/optim.hpp"
#include "latte/rng.hpp"
#include "latte/tensor.hpp"

namespace latte {

struct ModelConfig {
  std::size_t depth = 64;
  std::size_t heads = 8;
  std::size_t encoder_blocks = 1;
  std::size_t decoder_blocks = 5;
  std::size_t block_mlp_hidden = 128;
  std::size_t output_mlp_hidden = 128;
  std::size_t output_mlp_layers = 3;
  std::size_t max_tokens = 100;
  std::size_t waypoints = kDefaultWaypoints;
  std::size_t max_objects = kDefaultMaxObjects;
  std::size_t semantic_dim = 64;
  bool lf_enabled = false;
  bool feature_residual = false;
  bool post_norm = true;
  std::uint64_t init_seed = 0;

  /// Desk-scale preset used by the tests.
  static ModelConfig toy() { return ModelConfig{}; }

  /// Full-size architecture: depth 400, 512-wide MLPs, 768-wide text features.
  static ModelConfig full() {
    ModelConfig c;
    c.depth = 400;
    c.block_mlp_hidden = 512;
    c.output_mlp_hidden = 512;
    c.semantic_dim = 768;
    return c;
  }

  FeatureLayout feature_layout() const { return {max_objects, semantic_dim, lf_enabled}; }
  std::size_t feature_dim() const { return feature_layout().size(); }
  std::size_t memory_tokens() const { return waypoints + max_objects; }

  void validate() const {
    if (heads == 0 || depth % heads != 0) throw SchemaError("depth must be divisible by the number of heads");
    if (waypoints < 2) throw SchemaError("trajectories need at least two waypoints");
    if (waypoints + max_objects > max_tokens) throw SchemaError("N + M_max exceeds the token budget");
    if (semantic_dim == 0 || output_mlp_layers == 0) throw SchemaError("degenerate model configuration");
  }

  bool operator==(const ModelConfig&) const = default;

  nlohmann::json to_json() const {
    return {{"depth", depth},
            {"heads", heads},
            {"encoder_blocks", encoder_blocks},
            {"decoder_blocks", decoder_blocks},
            {"block_mlp_hidden", block_mlp_hidden},
            {"output_mlp_hidden", output_mlp_hidden},
            {"output_mlp_layers", output_mlp_layers},
            {"max_tokens", max_tokens},
            {"waypoints", waypoints},
            {"max_objects", max_objects},
            {"semantic_dim", semantic_dim},
            {"lf_enabled", lf_enabled},
            {"feature_residual", feature_residual},
            {"post_norm", post_norm},
            {"init_seed", init_seed},
            {"feature_layout", feature_layout().tag()}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("depth", c.depth);
    get("heads", c.heads);
    get("encoder_blocks", c.encoder_blocks);
    get("decoder_blocks", c.decoder_blocks);
    get("block_mlp_hidden", c.block_mlp_hidden);
    get("output_mlp_hidden", c.output_mlp_hidden);
    get("output_mlp_layers", c.output_mlp_layers);
    get("max_tokens", c.max_tokens);
    get("waypoints", c.waypoints);
    get("max_objects", c.max_objects);
    get("semantic_dim", c.semantic_dim);
    get("lf_enabled", c.lf_enabled);
    get("feature_residual", c.feature_residual);
    get("post_norm", c.post_norm);
    get("init_seed", c.init_seed);
    if (j.contains("feature_layout") && j["feature_layout"].get<std::string>() != c.feature_layout().tag()) {
      throw SchemaError("feature layout '" + j["feature_layout"].get<std::string>() +
                        "' does not match this build's layout '" + c.feature_layout().tag() + "'");
    }
    c.validate();
    return c;
  }
};

/// One conditioning request: the original trajectory, its scene and the
/// command features.
struct ModelInput {
  Trajectory original;
  Scene scene;
  FeatureInputs features;
};

/// Head-averaged attention probabilities summed over samples.
struct AttentionMaps {
  std::size_t samples = 0;
  std::vector<std::vector<double>> encoder;        // per block, (N+M)^2
  std::vector<std::vector<double>> decoder_self;   // per block, N^2
  std::vector<std::vector<double>> decoder_cross;  // per block, N x (N+M+1)
};

namespace nn {

template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> xavier(const std::string& name, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<T> v(fan_in * fan_out);
    for (auto& x : v) x = static_cast<T>(rng_.uniform(-limit, limit));
    return add(name, Tensor<T>(Shape{fan_in, fan_out}, std::move(v), true));
  }

  Tensor<T> normal(const std::string& name, Shape shape, double stddev) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng_.normal(0.0, stddev));
    return add(name, Tensor<T>(std::move(shape), std::move(v), true));
  }

  Tensor<T> constant(const std::string& name, Shape shape, T value) {
    const auto n = shape_numel(shape);
    return add(name, Tensor<T>(std::move(shape), std::vector<T>(n, value), true));
  }

  ParameterList<T>& list() { return params_; }

 private:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    params_.push_back({name, t});
    return t;
  }

  Rng rng_;
  ParameterList<T> params_;
};

template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined for bias-free projections

  Linear() = default;
  Linear(ParameterStore<T>& ps, const std::string& name, std::size_t in, std::size_t out, bool with_bias = true)
      : weight(ps.xavier(name + ".weight", in, out)) {
    if (with_bias) bias = ps.constant(name + ".bias", Shape{out}, T{0});
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain, bias;

  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& ps, const std::string& name, std::size_t width)
      : gain(ps.constant(name + ".gain", Shape{width}, T{1})),
        bias(ps.constant(name + ".bias", Shape{width}, T{0})) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  FeedForward() = default;
  FeedForward(ParameterStore<T>& ps, const std::string& name, std::size_t width, std::size_t hidden)
      : up(ps, name + ".up", width, hidden), down(ps, name + ".down", hidden, width) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return down(relu(up(x))); }
};

template <typename T>
void accumulate_attention(const Tensor<T>& probs, std::size_t heads, std::vector<double>* sink) {
  if (sink == nullptr) return;
  const std::size_t bh = probs.dim(0), tq = probs.dim(1), tk = probs.dim(2);
  sink->resize(tq * tk, 0.0);
  const double inv = 1.0 / static_cast<double>(heads);
  for (std::size_t i = 0; i < bh; ++i) {
    for (std::size_t e = 0; e < tq * tk; ++e) (*sink)[e] += inv * static_cast<double>(probs[i * tq * tk + e]);
  }
}

template <typename T>
struct MultiHeadAttention {
  Linear<T> query, key, value, out;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<T>& ps, const std::string& name, std::size_t width, std::size_t h)
      : query(ps, name + ".query", width, width),
        key(ps, name + ".key", width, width),
        value(ps, name + ".value", width, width),
        out(ps, name + ".out", width, width),
        heads(h) {}

  Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal,
                   std::vector<double>* sink) const {
    const auto qh = split_heads(q, heads);
    const auto kh = split_heads(k, heads);
    const auto vh = split_heads(v, heads);
    const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(qh.dim(2)));
    const auto scores = scale(bmm(qh, kh, true), inv_sqrt);
    const auto probs = causal ? causal_softmax(scores) : softmax(scores);
    accumulate_attention(probs, heads, sink);
    return out(merge_heads(bmm(probs, vh), heads));
  }

  Tensor<T> operator()(const Tensor<T>& q_in, const Tensor<T>& kv_in, bool causal,
                       std::vector<double>* sink = nullptr) const {
    return attend(query(q_in), key(kv_in), value(kv_in), causal, sink);
  }
};

template <typename T>
struct EncoderBlock {
  MultiHeadAttention<T> attention;
  LayerNorm<T> norm1, norm2;
  FeedForward<T> mlp;
  bool post_norm = true;

  EncoderBlock() = default;
  EncoderBlock(ParameterStore<T>& ps, const std::string& name, const ModelConfig& c)
      : attention(ps, name + ".attention", c.depth, c.heads),
        norm1(ps, name + ".norm1", c.depth),
        norm2(ps, name + ".norm2", c.depth),
        mlp(ps, name + ".mlp", c.depth, c.block_mlp_hidden),
        post_norm(c.post_norm) {}

  Tensor<T> operator()(const Tensor<T>& x, std::vector<double>* sink) const {
    if (post_norm) {
      auto h = norm1(add(x, attention(x, x, false, sink)));
      return norm2(add(h, mlp(h)));
    }
    const auto n1 = norm1(x);
    auto h = add(x, attention(n1, n1, false, sink));
    return add(h, mlp(norm2(h)));
  }
};

/// Cached keys and values of one decoder block during incremental decoding.
template <typename T>
struct DecoderCache {
  Tensor<T> self_key, self_value;    // [B, t, d], grows by one row per step
  Tensor<T> cross_key, cross_value;  // [B, S, d], fixed
};

template <typename T>
struct DecoderBlock {
  MultiHeadAttention<T> self_attention, cross_attention;
  LayerNorm<T> norm1, norm2, norm3;
  FeedForward<T> mlp;
  bool post_norm = true;

  DecoderBlock() = default;
  DecoderBlock(ParameterStore<T>& ps, const std::string& name, const ModelConfig& c)
      : self_attention(ps, name + ".self_attention", c.depth, c.heads),
        cross_attention(ps, name + ".cross_attention", c.depth, c.heads),
        norm1(ps, name + ".norm1", c.depth),
        norm2(ps, name + ".norm2", c.depth),
        norm3(ps, name + ".norm3", c.depth),
        mlp(ps, name + ".mlp", c.depth, c.block_mlp_hidden),
        post_norm(c.post_norm) {}

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& memory, std::vector<double>* self_sink,
                       std::vector<double>* cross_sink) const {
    if (post_norm) {
      auto h = norm1(add(x, self_attention(x, x, true, self_sink)));
      h = norm2(add(h, cross_attention(h, memory, false, cross_sink)));
      return norm3(add(h, mlp(h)));
    }
    const auto n1 = norm1(x);
    auto h = add(x, self_attention(n1, n1, true, self_sink));
    h = add(h, cross_attention(norm2(h), memory, false, cross_sink));
    return add(h, mlp(norm3(h)));
  }

  void prime(DecoderCache<T>& cache, const Tensor<T>& memory) const {
    cache.cross_key = cross_attention.key(memory);
    cache.cross_value = cross_attention.value(memory);
    cache.self_key = Tensor<T>();
    cache.self_value = Tensor<T>();
  }

  static void append(Tensor<T>& cached, const Tensor<T>& row) {
    cached = cached.defined() ? concat<T>({cached, row}, 1) : row;
  }

  /// Processes the newest position x [B, 1, d] against the cached prefix.
  Tensor<T> step(const Tensor<T>& x, DecoderCache<T>& cache) const {
    const auto& sa = self_attention;
    const auto& ca = cross_attention;
    if (post_norm) {
      append(cache.self_key, sa.key(x));
      append(cache.self_value, sa.value(x));
      auto h = norm1(add(x, sa.attend(sa.query(x), cache.self_key, cache.self_value, false, nullptr)));
      h = norm2(add(h, ca.attend(ca.query(h), cache.cross_key, cache.cross_value, false, nullptr)));
      return norm3(add(h, mlp(h)));
    }
    const auto n1 = norm1(x);
    append(cache.self_key, sa.key(n1));
    append(cache.self_value, sa.value(n1));
    auto h = add(x, sa.attend(sa.query(n1), cache.self_key, cache.self_value, false, nullptr));
    h = add(h, ca.attend(ca.query(norm2(h)), cache.cross_key, cache.cross_value, false, nullptr));
    return add(h, mlp(norm3(h)));
  }
};

}  // namespace nn

/// Batched model tensors for a set of inputs.
template <typename T>
struct ModelBatch {
  std::size_t size = 0;
  Tensor<T> geometry;     // [B, N+M, 4]
  Tensor<T> absent;       // [B*(N+M), 1], 1 for empty object slots
  std::vector<const FeatureInputs*> features;
};

template <typename T>
struct ForwardOutput {
  Tensor<T> prediction;  // [B, N, 4]
  Tensor<T> loss;        // scalar, defined when targets were supplied
};

/// Language-conditioned trajectory transformer: geometry encoder over
/// waypoints and object poses, decoder with causal self-attention and
/// cross-attention over [encoder memory | projected q_F], output MLP with tanh.
template <typename T>
class LatteModel {
 public:
  explicit LatteModel(ModelConfig cfg, TextEncoder encoder = TextEncoder::default_encoder())
      : config_(cfg), encoder_(std::move(encoder)), store_(cfg.init_seed) {
    tune_allocator();
    config_.validate();
    if (!encoder_.trainable() && encoder_.imported_dim() != config_.semantic_dim) {
      throw DimensionError("imported embeddings have width " + std::to_string(encoder_.imported_dim()) +
                           " but the model expects " + std::to_string(config_.semantic_dim));
    }
    const auto& c = config_;
    auto& ps = store_;
    geometry_projection_ = nn::Linear<T>(ps, "encoder.projection", 4, c.depth, false);
    null_object_ = ps.normal("encoder.null_object", Shape{1, c.depth}, 0.02);
    encoder_positions_ = ps.normal("encoder.positions", Shape{c.max_tokens, c.depth}, 0.02);
    for (std::size_t i = 0; i < c.encoder_blocks; ++i) {
      encoder_blocks_.emplace_back(ps, "encoder.block" + std::to_string(i), c);
    }
    decoder_projection_ = nn::Linear<T>(ps, "decoder.projection", 4, c.depth, false);
    start_token_ = ps.normal("decoder.start", Shape{1, c.depth}, 0.02);
    decoder_positions_ = ps.normal("decoder.positions", Shape{c.max_tokens, c.depth}, 0.02);
    feature_projection_ = nn::Linear<T>(ps, "decoder.feature_projection", c.feature_dim(), c.depth);
    for (std::size_t i = 0; i < c.decoder_blocks; ++i) {
      decoder_blocks_.emplace_back(ps, "decoder.block" + std::to_string(i), c);
    }
    std::size_t width = c.depth + (c.feature_residual ? c.feature_dim() : 0);
    for (std::size_t i = 0; i < c.output_mlp_layers; ++i) {
      head_.emplace_back(ps, "head.hidden" + std::to_string(i), width, c.output_mlp_hidden);
      width = c.output_mlp_hidden;
    }
    head_.emplace_back(ps, "head.out", width, 4);
    network_parameter_count_ = count(ps.list());
    if (encoder_.trainable()) {
      token_table_ = ps.normal("text.tokens", Shape{Vocabulary::builtin().size(), c.semantic_dim}, 0.02);
    }
  }

  const ModelConfig& config() const noexcept { return config_; }
  const TextEncoder& encoder() const noexcept { return encoder_; }
  const ParameterList<T>& parameters() const { return store_.list(); }
  ParameterList<T>& parameters() { return store_.list(); }

  /// Parameters of the network proper, excluding the trainable token table.
  std::size_t network_parameter_count() const noexcept { return network_parameter_count_; }
  std::size_t parameter_count() const { return count(store_.list()); }

  FeatureInputs prepare_features(const std::string& text, const Scene& scene, std::optional<double> lf) const {
    return latte::prepare_features(encoder_, text, scene, lf, config_.feature_layout());
  }

  /// Current value of q_F for one command.
  std::vector<double> feature_embedding(const std::string& text, const Scene& scene, std::optional<double> lf) const {
    const auto f = prepare_features(text, scene, lf);
    const auto t = feature_tensor({&f});
    return std::vector<double>(t.data().begin(), t.data().end());
  }

  ModelBatch<T> make_batch(const std::vector<const ModelInput*>& inputs) const {
    const auto& c = config_;
    const std::size_t b = inputs.size(), s = c.memory_tokens();
    std::vector<T> geom(b * s * 4, T{0}), absent(b * s, T{0});
    ModelBatch<T> batch;
    batch.size = b;
    for (std::size_t i = 0; i < b; ++i) {
      const auto& in = *inputs[i];
      if (in.original.size() != c.waypoints) {
        throw DimensionError("trajectory has " + std::to_string(in.original.size()) + " waypoints, model expects " +
                             std::to_string(c.waypoints));
      }
      if (in.scene.size() > c.max_objects) {
        throw PreconditionError("scene has " + std::to_string(in.scene.size()) + " objects, at most " +
                                std::to_string(c.max_objects) + " allowed");
      }
      T* g = geom.data() + i * s * 4;
      for (std::size_t w = 0; w < c.waypoints; ++w) {
        for (std::size_t k = 0; k < 4; ++k) g[w * 4 + k] = static_cast<T>(in.original[w][k]);
      }
      for (std::size_t o = 0; o < c.max_objects; ++o) {
        T* row = g + (c.waypoints + o) * 4;
        if (o < in.scene.size()) {
          for (std::size_t k = 0; k < 3; ++k) row[k] = static_cast<T>(in.scene.objects[o].position[k]);
        } else {
          absent[i * s + c.waypoints + o] = T{1};
        }
      }
      batch.features.push_back(&in.features);
    }
    batch.geometry = Tensor<T>(Shape{b, s, 4}, std::move(geom));
    batch.absent = Tensor<T>(Shape{b * s, 1}, std::move(absent));
    return batch;
  }

  /// q_F for a batch -> [B, F].
  Tensor<T> feature_tensor(const std::vector<const FeatureInputs*>& feats) const {
    const auto& c = config_;
    const std::size_t b = feats.size();
    std::vector<T> sim(b * c.max_objects);
    for (std::size_t i = 0; i < b; ++i) {
      if (feats[i]->similarity.size() != c.max_objects) throw DimensionError("similarity vector width mismatch");
      for (std::size_t o = 0; o < c.max_objects; ++o) sim[i * c.max_objects + o] = static_cast<T>(feats[i]->similarity[o]);
    }
    std::vector<Tensor<T>> parts{Tensor<T>(Shape{b, c.max_objects}, std::move(sim))};
    if (encoder_.trainable()) {
      std::vector<std::size_t> ids, offsets{0};
      for (const auto* f : feats) {
        if (f->token_ids.empty()) throw PreconditionError("features carry no token ids");
        ids.insert(ids.end(), f->token_ids.begin(), f->token_ids.end());
        offsets.push_back(ids.size());
      }
      parts.push_back(segment_mean(embedding_lookup(token_table_, ids), offsets));
    } else {
      std::vector<T> sem(b * c.semantic_dim);
      for (std::size_t i = 0; i < b; ++i) {
        if (feats[i]->semantic.size() != c.semantic_dim) throw DimensionError("semantic feature width mismatch");
        for (std::size_t k = 0; k < c.semantic_dim; ++k) sem[i * c.semantic_dim + k] = static_cast<T>(feats[i]->semantic[k]);
      }
      parts.push_back(Tensor<T>(Shape{b, c.semantic_dim}, std::move(sem)));
    }
    if (c.lf_enabled) {
      std::vector<T> lf(b);
      for (std::size_t i = 0; i < b; ++i) {
        if (!feats[i]->lf) throw SchemaError("this model needs a locality factor");
        lf[i] = static_cast<T>(*feats[i]->lf);
      }
      parts.push_back(Tensor<T>(Shape{b, 1}, std::move(lf)));
    }
    return concat(parts, 1);
  }

  /// Encoder memory [B, N+M, d].
  Tensor<T> encode(const ModelBatch<T>& batch, AttentionMaps* maps = nullptr) const {
    const auto& c = config_;
    const std::size_t s = c.memory_tokens();
    auto x = geometry_projection_(batch.geometry);
    x = add(x, reshape(matmul(batch.absent, null_object_), Shape{batch.size, s, c.depth}));
    x = add(x, slice(encoder_positions_, 0, 0, s));
    for (std::size_t i = 0; i < encoder_blocks_.size(); ++i) {
      x = encoder_blocks_[i](x, maps ? &maps->encoder[i] : nullptr);
    }
    return x;
  }

  /// [encoder memory | projected q_F] -> [B, N+M+1, d].
  Tensor<T> fused_memory(const Tensor<T>& memory, const Tensor<T>& features) const {
    const std::size_t b = memory.dim(0);
    auto token = reshape(feature_projection_(features), Shape{b, 1, config_.depth});
    return concat<T>({memory, token}, 1);
  }

  /// Start token followed by the projected previous waypoints [B, T-1, 4].
  Tensor<T> embed_decoder_input(const Tensor<T>& previous, std::size_t batch) const {
    const std::vector<std::size_t> zeros(batch, 0);
    auto start = reshape(embedding_lookup(start_token_, zeros), Shape{batch, 1, config_.depth});
    Tensor<T> x = previous.dim(1) == 0 ? start : concat<T>({start, decoder_projection_(previous)}, 1);
    return add(x, slice(decoder_positions_, 0, 0, x.dim(1)));
  }

  /// Output MLP with tanh over decoder states [B, T, d].
  Tensor<T> output_head(const Tensor<T>& h, const Tensor<T>& features) const {
    Tensor<T> x = h;
    if (config_.feature_residual) {
      const std::size_t b = h.dim(0), t = h.dim(1);
      std::vector<std::size_t> rows(b * t);
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i / t;
      auto tiled = reshape(embedding_lookup(features, rows), Shape{b, t, config_.feature_dim()});
      x = concat<T>({h, tiled}, 2);
    }
    for (std::size_t i = 0; i + 1 < head_.size(); ++i) x = relu(head_[i](x));
    return latte::tanh(head_.back()(x));
  }

  /// Teacher-forced prediction. `targets` [B, N, 4] supplies the shifted
  /// decoder input and, when `with_loss`, the Huber target. A non-null
  /// `decoder_source` of the same shape replaces `targets` as the shifted
  /// decoder input.
  ForwardOutput<T> forward(const ModelBatch<T>& batch, const Tensor<T>& targets, bool with_loss = true,
                           AttentionMaps* maps = nullptr, T huber_delta = static_cast<T>(kDefaultHuberDelta),
                           const Tensor<T>* decoder_source = nullptr) const {
    const auto& c = config_;
    if (targets.rank() != 3 || targets.dim(0) != batch.size || targets.dim(1) != c.waypoints || targets.dim(2) != 4) {
      throw DimensionError("targets must have shape [B, N, 4], got " + shape_str(targets.shape()));
    }
    if (decoder_source && decoder_source->shape() != targets.shape()) {
      throw DimensionError("decoder source must have shape " + shape_str(targets.shape()) + ", got " +
                           shape_str(decoder_source->shape()));
    }
    if (maps) prepare_maps(*maps);
    const auto features = feature_tensor(batch.features);
    const auto memory = fused_memory(encode(batch, maps), features);
    const Tensor<T>& source = decoder_source ? *decoder_source : targets;
    auto x = embed_decoder_input(slice(source, 1, 0, c.waypoints - 1), batch.size);
    for (std::size_t i = 0; i < decoder_blocks_.size(); ++i) {
      x = decoder_blocks_[i](x, memory, maps ? &maps->decoder_self[i] : nullptr,
                             maps ? &maps->decoder_cross[i] : nullptr);
    }
    ForwardOutput<T> out;
    out.prediction = output_head(x, features);
    if (maps) maps->samples += batch.size;
    if (with_loss) out.loss = huber_loss(out.prediction, targets, huber_delta);
    return out;
  }

  /// Greedy autoregressive decoding of N waypoints, one per step, each fed
  /// back as the next decoder input. Runs without recording gradients.
  std::vector<Trajectory> generate(const std::vector<const ModelInput*>& inputs) const {
    if (inputs.empty()) return {};
    auto* saved = active_tape<T>();
    active_tape<T>() = nullptr;
    struct Restore {
      Tape<T>* tape;
      ~Restore() { active_tape<T>() = tape; }
    } restore{saved};

    const auto& c = config_;
    const auto batch = make_batch(inputs);
    const std::size_t b = batch.size;
    const auto features = feature_tensor(batch.features);
    const auto memory = fused_memory(encode(batch), features);
    std::vector<nn::DecoderCache<T>> caches(decoder_blocks_.size());
    for (std::size_t i = 0; i < decoder_blocks_.size(); ++i) decoder_blocks_[i].prime(caches[i], memory);

    const std::vector<std::size_t> zeros(b, 0);
    Tensor<T> token = reshape(embedding_lookup(start_token_, zeros), Shape{b, 1, c.depth});
    std::vector<Trajectory> out(b);
    for (auto& t : out) t.waypoints.resize(c.waypoints);
    for (std::size_t step = 0; step < c.waypoints; ++step) {
      auto x = add(token, slice(decoder_positions_, 0, step, step + 1));
      for (std::size_t i = 0; i < decoder_blocks_.size(); ++i) x = decoder_blocks_[i].step(x, caches[i]);
      const auto y = output_head(x, features);  // [B, 1, 4]
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t k = 0; k < 4; ++k) out[i][step][k] = static_cast<double>(y[i * 4 + k]);
      }
      token = decoder_projection_(y);
    }
    return out;
  }

  Trajectory generate(const ModelInput& input) const { return generate(std::vector<const ModelInput*>{&input}).front(); }

  void prepare_maps(AttentionMaps& maps) const {
    maps.encoder.resize(encoder_blocks_.size());
    maps.decoder_self.resize(decoder_blocks_.size());
    maps.decoder_cross.resize(decoder_blocks_.size());
  }

  /// Looks up a parameter by name.
  Tensor<T> parameter(const std::string& name) const {
    for (const auto& p : store_.list()) {
      if (p.name == name) return p.tensor;
    }
    throw LookupError("no parameter named '" + name + "'");
  }

 private:
  static std::size_t count(const ParameterList<T>& list) {
    std::size_t n = 0;
    for (const auto& p : list) n += p.tensor.numel();
    return n;
  }

  ModelConfig config_;
  TextEncoder encoder_;
  mutable nn::ParameterStore<T> store_;
  nn::Linear<T> geometry_projection_;
  Tensor<T> null_object_;
  Tensor<T> encoder_positions_;
  std::vector<nn::EncoderBlock<T>> encoder_blocks_;
  nn::Linear<T> decoder_projection_;
  Tensor<T> start_token_;
  Tensor<T> decoder_positions_;
  nn::Linear<T> feature_projection_;
  std::vector<nn::DecoderBlock<T>> decoder_blocks_;
  std::vector<nn::Linear<T>> head_;
  Tensor<T> token_table_;
  std::size_t network_parameter_count_ = 0;
};

/// Packs trajectories into a [B, N, 4] tensor.
template <typename T>
Tensor<T> trajectories_tensor(const std::vector<const Trajectory*>& trajs) {
  const std::size_t b = trajs.size(), n = b ? trajs.front()->size() : 0;
  std::vector<T> v(b * n * 4);
  for (std::size_t i = 0; i < b; ++i) {
    if (trajs[i]->size() != n) throw DimensionError("trajectories in a batch differ in length");
    for (std::size_t w = 0; w < n; ++w) {
      for (std::size_t k = 0; k < 4; ++k) v[(i * n + w) * 4 + k] = static_cast<T>((*trajs[i])[w][k]);
    }
  }
  return Tensor<T>(Shape{b, n, 4}, std::move(v));
}

template <typename T>
std::vector<Trajectory> tensor_trajectories(const Tensor<T>& t) {
  const std::size_t b = t.dim(0), n = t.dim(1);
  std::vector<Trajectory> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    out[i].waypoints.resize(n);
    for (std::size_t w = 0; w < n; ++w) {
      for (std::size_t k = 0; k < 4; ++k) out[i][w][k] = static_cast<double>(t[(i * n + w) * 4 + k]);
    }
  }
  return out;
}

}  // namespace latte
