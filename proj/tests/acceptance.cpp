#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "latte/checkpoint.hpp"
#include "latte/constraints.hpp"
#include "latte/oracle.hpp"
#include "latte/server.hpp"
#include "latte/session.hpp"
#include "latte/training.hpp"
#include "test_util.hpp"

using namespace latte;
using nlohmann::json;
using latte::testing::check_gradients;
using latte::testing::random_tensor;
using latte::testing::weighted_sum;

namespace {

namespace fs = std::filesystem;

fs::path g_cache;

/// Collects failed requirements of one criterion and a short summary line.
struct Verdict {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<DatasetSample> make_samples(std::size_t n, std::uint64_t seed, const GeneratorConfig& g = {}) {
  DatasetOptions opts;
  opts.count = n;
  opts.seed = seed;
  opts.generator = g;
  std::vector<DatasetSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(dataset_sample(opts, i));
  return out;
}

std::vector<ModelInput> inputs_for(const LatteModel<float>& model, const std::vector<DatasetSample>& samples) {
  std::vector<ModelInput> out;
  for (const auto& s : samples) out.push_back({s.original, s.scene, model.prepare_features(s.text, s.scene, s.lf)});
  return out;
}

double waypoint_distance(const Waypoint& a, const Waypoint& b) {
  double sq = 0;
  for (std::size_t c = 0; c < 4; ++c) sq += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// A1

void a1(Verdict& v) {
  Rng rng(42);
  double worst = 0;
  std::size_t checked = 0;
  auto run = [&](const std::string& op, const latte::testing::GradCheck& gc) {
    checked += gc.checked;
    worst = std::max(worst, gc.max_rel_error);
    v.require(gc.checked > 0 && gc.max_rel_error < 1e-4, op + ": " + gc.worst);
  };
  {
    auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 5}, rng);
    run("matmul", check_gradients([&] { return weighted_sum(matmul(a, b)); }, {{"a", a}, {"b", b}}));
  }
  {
    auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 4, 5}, rng), c = random_tensor({2, 5, 4}, rng);
    run("bmm", check_gradients([&] { return weighted_sum(bmm(a, b)); }, {{"a", a}, {"b", b}}));
    run("bmm_t", check_gradients([&] { return weighted_sum(bmm(a, c, true)); }, {{"a", a}, {"c", c}}));
  }
  {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng), c = random_tensor({3, 4}, rng);
    run("add", check_gradients([&] { return weighted_sum(add(a, b)); }, {{"a", a}, {"b", b}}));
    run("mul_broadcast", check_gradients([&] { return weighted_sum(mul(a, b)); }, {{"a", a}, {"b", b}}));
    run("mul", check_gradients([&] { return weighted_sum(mul(a, c)); }, {{"a", a}, {"c", c}}));
  }
  {
    auto a = random_tensor({3, 5}, rng, true, 2.0);
    run("scale", check_gradients([&] { return weighted_sum(scale(a, 0.37)); }, {{"a", a}}));
    run("relu", check_gradients([&] { return weighted_sum(relu(a)); }, {{"a", a}}));
    run("tanh", check_gradients([&] { return weighted_sum(latte::tanh(a)); }, {{"a", a}}));
    run("softmax", check_gradients([&] { return weighted_sum(softmax(a, 1)); }, {{"a", a}}));
    run("softmax_axis0", check_gradients([&] { return weighted_sum(softmax(a, 0)); }, {{"a", a}}));
  }
  {
    auto c = random_tensor({2, 4, 4}, rng, true, 2.0);
    run("causal_softmax", check_gradients([&] { return weighted_sum(causal_softmax(c)); }, {{"c", c}}));
  }
  {
    auto a = random_tensor({2, 3, 2}, rng), b = random_tensor({2, 1, 2}, rng);
    run("concat", check_gradients([&] { return weighted_sum(concat<double>({a, b}, 1)); }, {{"a", a}, {"b", b}}));
    run("slice", check_gradients([&] { return weighted_sum(slice(a, 1, 1, 3)); }, {{"a", a}}));
    run("reshape", check_gradients([&] { return weighted_sum(reshape(a, {3, 4})); }, {{"a", a}}));
  }
  {
    auto a = random_tensor({2, 3, 6}, rng), b = random_tensor({6, 3, 2}, rng);
    run("split_heads", check_gradients([&] { return weighted_sum(split_heads(a, 3)); }, {{"a", a}}));
    run("merge_heads", check_gradients([&] { return weighted_sum(merge_heads(b, 3)); }, {{"b", b}}));
  }
  {
    auto x = random_tensor({4, 6}, rng, true, 2.0), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    run("layer_norm", check_gradients([&] { return weighted_sum(layer_norm(x, g, b)); }, {{"x", x}, {"g", g}, {"b", b}}));
  }
  {
    auto table = random_tensor({5, 3}, rng);
    run("embedding_lookup+segment_mean",
        check_gradients([&] { return weighted_sum(segment_mean(embedding_lookup(table, {0, 3, 3, 1, 4}), {0, 2, 5})); },
                        {{"table", table}}));
  }
  {
    auto p = random_tensor({4, 4}, rng, true, 2.5), t = random_tensor({4, 4}, rng, false, 0.5);
    run("huber", check_gradients([&] { return huber_loss(p, t, 1.0); }, {{"p", p}}));
    run("huber_small_delta", check_gradients([&] { return huber_loss(p, t, 0.3); }, {{"p", p}}));
    run("sum", check_gradients([&] { return sum(mul(matmul(p, p), p)); }, {{"p", p}}));
  }
  const std::size_t op_checks = checked;

  for (const bool residual : {false, true}) {
    auto c = ModelConfig::toy();
    c.feature_residual = residual;
    c.lf_enabled = residual;
    c.init_seed = 5;
    LatteModel<double> model(c);
    GeneratorConfig g;
    g.lf_enabled = c.lf_enabled;
    std::vector<DatasetSample> samples;
    for (std::uint64_t s = 0; s < 2; ++s) samples.push_back(generate_sample(100 + s, g));
    std::vector<ModelInput> inputs;
    for (const auto& s : samples) inputs.push_back({s.original, s.scene, model.prepare_features(s.text, s.scene, s.lf)});
    std::vector<const ModelInput*> ptrs;
    std::vector<const Trajectory*> targets;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      ptrs.push_back(&inputs[i]);
      targets.push_back(&samples[i].modified);
    }
    const auto batch = model.make_batch(ptrs);
    const auto target = trajectories_tensor<double>(targets);
    std::vector<std::pair<std::string, Tensor<double>>> wrt;
    for (const auto& p : model.parameters()) wrt.emplace_back(p.name, p.tensor);
    run(residual ? "toy model (feature residual, lf)" : "toy model",
        check_gradients([&] { return model.forward(batch, target).loss; }, wrt, 4, 1e-6));
  }
  v.note("ops " + std::to_string(op_checks) + " entries, model " + std::to_string(checked - op_checks) +
         " entries, max rel. err " + fmt(worst));
}

// ---------------------------------------------------------------------------
// A2

/// True when waypoint `w` (already moved by `field`) cannot move further
/// under that field: it sits on the support boundary, on the center, or
/// against the unit box.
bool saturated(const Waypoint& w, const ModificationIntent& intent, const Scene& scene) {
  for (std::size_t c = 0; c < 4; ++c) {
    if (std::abs(w[c]) >= 1.0) return true;
  }
  if (intent.kind != IntentKind::distance) return false;
  const double dist = norm(w.position() - scene.find(*intent.target)->position);
  const double range = locality_range(intent.locality_factor);
  return intent.polarity == Polarity::closer ? dist <= 1e-12 : dist >= range - 1e-12;
}

void a2(Verdict& v) {
  const std::size_t n = 1000;
  std::size_t strict = 0, saturated_pairs = 0, no_effect = 0, round_trips = 0;
  std::map<IntentFamily, std::size_t> families;
  Rng probe_rng(3);
  for (std::uint64_t seed = 0; seed < n; ++seed) {
    const auto s = generate_sample(seed);
    ++families[family_of(s.intent.kind)];
    const std::string tag = "sample " + std::to_string(seed) + ": ";
    const auto field = make_field(s.intent, s.scene);
    const double range = locality_range(s.intent.locality_factor);

    switch (s.intent.kind) {
      case IntentKind::cartesian: {
        const auto f0 = field(Vec3{0, 0, 0});
        bool constant = f0[3] == 0.0;
        for (int k = 0; k < 50; ++k) {
          const Vec3 q{probe_rng.uniform(-1, 1), probe_rng.uniform(-1, 1), probe_rng.uniform(-1, 1)};
          constant = constant && field(q) == f0;
        }
        for (std::size_t i = 0; i < s.original.size(); ++i) constant = constant && s.modified[i].v == s.original[i].v;
        v.require(constant, tag + "cartesian field is not spatially constant with zero speed change");
        break;
      }
      case IntentKind::distance: {
        const Vec3 center = s.scene.find(*s.intent.target)->position;
        const double sign = s.intent.polarity == Polarity::closer ? -1.0 : 1.0;
        bool ok = true;
        for (int k = 0; k < 50; ++k) {
          const Vec3 q{probe_rng.uniform(-1, 1), probe_rng.uniform(-1, 1), probe_rng.uniform(-1, 1)};
          const auto f = field(q);
          const Vec3 d = q - center;
          const double dist = norm(d);
          const Vec3 fp{f[0], f[1], f[2]};
          if (dist > range) {
            ok = ok && f == FieldValue{0, 0, 0, 0};
          } else if (dist > 0) {
            ok = ok && f[3] == 0.0 && norm(fp - (dot(fp, d) / (dist * dist)) * d) <= 1e-12 * norm(fp) &&
                 sign * dot(fp, d) > 0;
          }
        }
        for (std::size_t i = 0; i < s.original.size(); ++i) {
          const double dist = norm(s.original[i].position() - center);
          if (dist > range) ok = ok && s.modified[i] == s.original[i];
          ok = ok && s.modified[i].v == s.original[i].v;
        }
        v.require(ok, tag + "distance field is not zero beyond range and radial within");
        break;
      }
      case IntentKind::speed_global:
      case IntentKind::speed_local: {
        bool ok = true;
        for (std::size_t i = 0; i < s.original.size(); ++i) ok = ok && s.modified[i].position() == s.original[i].position();
        v.require(ok, tag + "speed command moved a position");
        break;
      }
    }

    std::array<Trajectory, 3> outs;
    std::array<double, 3> total{};
    for (std::size_t k = 0; k < 3; ++k) {
      auto intent = s.intent;
      intent.intensity = kIntensities[k];
      outs[k] = oracle_reshape(s.original, intent, s.scene);
      for (std::size_t i = 0; i < s.original.size(); ++i) total[k] += waypoint_distance(s.original[i], outs[k][i]);
    }
    if (total[2] == 0.0) ++no_effect;
    for (std::size_t k = 0; k + 1 < 3; ++k) {
      auto lower = s.intent;
      lower.intensity = kIntensities[k];
      bool has_free = false, per_waypoint = true;
      for (std::size_t i = 0; i < s.original.size(); ++i) {
        const double lo = waypoint_distance(s.original[i], outs[k][i]);
        const double hi = waypoint_distance(s.original[i], outs[k + 1][i]);
        per_waypoint = per_waypoint && lo <= hi + 1e-12;
        if (lo > 0 && !saturated(outs[k][i], lower, s.scene)) {
          has_free = true;
          per_waypoint = per_waypoint && hi > lo;
        }
      }
      v.require(per_waypoint, tag + "a waypoint moved less at intensity " + fmt(kIntensities[k + 1]));
      if (has_free) {
        v.require(total[k] < total[k + 1], tag + "total displacement not strictly increasing at intensity " +
                                               fmt(kIntensities[k + 1]));
        ++strict;
      } else {
        v.require(total[k] <= total[k + 1] + 1e-12, tag + "total displacement decreased");
        ++saturated_pairs;
      }
    }

    try {
      if (parse_intent(s.text, &s.scene, s.intent.locality_factor) == s.intent) {
        ++round_trips;
      } else {
        v.require(false, tag + "round trip mismatch for '" + s.text + "'");
      }
    } catch (const Error& e) {
      v.require(false, tag + "'" + s.text + "' does not parse: " + e.what());
    }
  }
  v.require(round_trips == n, "render_text/parse_intent round trip below 100%");
  for (const auto f : {IntentFamily::cartesian, IntentFamily::distance, IntentFamily::speed}) {
    v.require(families[f] > 250, "family " + std::string(to_string(f)) + " under-represented");
  }
  v.note(std::to_string(n) + " samples, round trip " + std::to_string(round_trips) + "/" + std::to_string(n) +
         ", intensity pairs strict " + std::to_string(strict) + ", saturated " + std::to_string(saturated_pairs) +
         ", no effect " + std::to_string(no_effect));
}

// ---------------------------------------------------------------------------
// A3

void a3(Verdict& v) {
  auto c = ModelConfig::toy();
  c.lf_enabled = true;
  c.init_seed = 1;
  LatteModel<float> model(c);
  const auto samples = make_samples(64, 31);
  const auto inputs = inputs_for(model, samples);
  std::vector<const ModelInput*> all;
  std::vector<const Trajectory*> all_targets;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    all.push_back(&inputs[i]);
    all_targets.push_back(&samples[i].modified);
  }
  const auto full_batch = model.make_batch(all);
  const auto full_target = trajectories_tensor<float>(all_targets);
  auto full_loss = [&] { return static_cast<double>(model.forward(full_batch, full_target).loss.item()); };

  const std::size_t max_steps = 2000, batch = 16, check_every = 20;
  const double lr = 1e-3;
  Adam<float> adam(model.parameters());
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  double loss = full_loss(), best = loss;
  const double initial = loss;
  std::size_t step = 0, reached = 0;
  Rng rng(17);
  while (step < max_steps && reached == 0) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t b = 0; b < order.size() && step < max_steps; b += batch) {
      std::vector<const ModelInput*> in;
      std::vector<const Trajectory*> tg;
      for (std::size_t i = b; i < std::min(order.size(), b + batch); ++i) {
        in.push_back(&inputs[order[i]]);
        tg.push_back(&samples[order[i]].modified);
      }
      Tape<float> tape;
      {
        TapeScope<float> scope(tape);
        const auto out = model.forward(model.make_batch(in), trajectories_tensor<float>(tg));
        tape.backward(out.loss);
      }
      adam.step(lr * std::min(1.0, static_cast<double>(step + 1) / 100.0));
      ++step;
      if (step % check_every == 0) {
        loss = full_loss();
        best = std::min(best, loss);
        if (loss < 1e-3) {
          reached = step;
          break;
        }
      }
    }
  }
  v.require(reached > 0, "training Huber loss stayed at " + fmt(best) + " after " + std::to_string(step) + " steps");
  v.note("toy d=" + std::to_string(c.depth) + ", 64 samples, Huber " + fmt(initial) + " -> " + fmt(loss) +
         (reached ? " at step " + std::to_string(reached) : " (not reached)"));
}

// ---------------------------------------------------------------------------
// A4 / A5

constexpr std::size_t kTrendSteps = 3000;
constexpr std::uint64_t kTrendTrainSeed = 1;
constexpr std::uint64_t kTrendHeldOutSeed = 99;

ModelConfig trend_config() {
  auto c = ModelConfig::toy();
  c.lf_enabled = true;
  c.init_seed = 11;
  return c;
}

TrainOptions trend_options(bool augment, const fs::path& checkpoint) {
  TrainOptions o;
  o.epochs = 100000;
  o.max_steps = kTrendSteps;
  o.batch_size = 16;
  o.learning_rate = 1e-3;
  o.warmup_steps = 200;
  o.val_fraction = 0.1;
  o.seed = 0;
  o.augment = augment;
  o.input_noise = 0.1;
  o.checkpoint_path = checkpoint.string();
  return o;
}

LatteModel<float> train_trend_model(std::size_t count, bool augment, const fs::path& checkpoint) {
  const auto pool = make_samples(count, kTrendTrainSeed);
  LatteModel<float> model(trend_config());
  train(model, pool, trend_options(augment, checkpoint));
  return model;
}

fs::path trend_checkpoint(std::size_t count, bool augment) {
  return g_cache / ("trend_" + std::to_string(count) + (augment ? "_augment" : "") + ".ckpt");
}

void a4(Verdict& v) {
  const auto held_out = make_samples(500, kTrendHeldOutSeed);
  struct RunSpec {
    std::size_t count;
    bool augment;
  };
  std::vector<double> mse;
  for (const auto& r : {RunSpec{4000, false}, RunSpec{500, false}, RunSpec{500, true}}) {
    const auto start = std::chrono::steady_clock::now();
    const auto model = train_trend_model(r.count, r.augment, trend_checkpoint(r.count, r.augment));
    mse.push_back(evaluate(model, held_out).mse);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    v.note(std::to_string(r.count) + (r.augment ? "+augment" : "") + " MSE " + fmt(mse.back()) + " (" +
           fmt(secs) + " s)");
  }
  v.require(mse[0] < mse[1], "4k model is not better than the 500-sample model");
  v.require(mse[2] <= 1.05 * mse[1], "augmentation worsened held-out MSE by more than 5%");
  v.note(std::string("augmentation ") + (mse[2] < mse[1] ? "improved" : "did not improve") + " MSE at 500");
}

void a5(Verdict& v) {
  std::vector<DatasetSample> probes;
  GeneratorConfig g;
  DatasetOptions opts;
  opts.seed = kTrendHeldOutSeed + 1;
  for (std::size_t i = 0; probes.size() < 100; ++i) {
    auto s = dataset_sample(opts, i);
    if (s.intent.kind == IntentKind::distance) probes.push_back(std::move(s));
  }

  std::size_t oracle_far = 0;
  for (const auto& s : probes) {
    const Vec3 target = s.scene.find(*s.intent.target)->position;
    for (const double lf : {0.1, 0.9}) {
      auto intent = s.intent;
      intent.locality_factor = lf;
      const auto out = oracle_reshape(s.original, intent, s.scene);
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (norm(s.original[i].position() - target) > locality_range(lf)) {
          ++oracle_far;
          v.require(out[i] == s.original[i], "oracle moved a waypoint beyond r(lf)");
        }
      }
    }
  }

  const auto ckpt = trend_checkpoint(4000, false);
  std::optional<LatteModel<float>> model;
  if (fs::exists(ckpt)) {
    model.emplace(load_model<float>(ckpt.string()));
    if (!(model->config() == trend_config())) model.reset();
  }
  if (!model) model.emplace(train_trend_model(4000, false, ckpt));

  const double r_low = locality_range(0.1);
  std::array<double, 2> far_mean{};
  std::size_t far_count = 0;
  for (std::size_t k = 0; k < 2; ++k) {
    const double lf = k == 0 ? 0.1 : 0.9;
    std::vector<ModelInput> inputs;
    for (const auto& s : probes) inputs.push_back({s.original, s.scene, model->prepare_features(s.text, s.scene, lf)});
    std::vector<const ModelInput*> ptrs;
    for (const auto& in : inputs) ptrs.push_back(&in);
    const auto outs = model->generate(ptrs);
    double total = 0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < probes.size(); ++p) {
      const Vec3 target = probes[p].scene.find(*probes[p].intent.target)->position;
      for (std::size_t i = 0; i < outs[p].size(); ++i) {
        if (norm(probes[p].original[i].position() - target) <= r_low) continue;
        total += norm(outs[p][i].position() - probes[p].original[i].position());
        ++count;
      }
    }
    far_mean[k] = count ? total / static_cast<double>(count) : 0.0;
    far_count = count;
  }
  v.require(far_count > 0, "probe set has no far waypoints");
  v.require(far_mean[0] < far_mean[1], "far-waypoint displacement at lf=0.1 is not below lf=0.9");
  v.note("oracle far waypoints " + std::to_string(oracle_far) + " unmoved; model far displacement lf=0.1 " +
         fmt(far_mean[0]) + " vs lf=0.9 " + fmt(far_mean[1]) + " over " + std::to_string(far_count) + " waypoints");
}

// ---------------------------------------------------------------------------
// A6

void a6(Verdict& v) {
  Rng rng(2024);
  const RaycastConfig cfg;
  std::size_t clipped = 0, waypoints = 0, inadmissible = 0, far_from_boundary = 0, not_idempotent = 0;
  for (int c = 0; c < 1000; ++c) {
    AdmissibleRegion k;
    const std::size_t boxes = 1 + rng.index(3);
    for (std::size_t b = 0; b < boxes; ++b) {
      Vec3 lo, hi;
      for (std::size_t a = 0; a < 3; ++a) {
        lo[a] = rng.uniform(-0.9, 0.5);
        hi[a] = lo[a] + rng.uniform(0.1, 0.6);
      }
      k.keep_out.push_back({lo, hi});
    }
    Trajectory a, b;
    while (a.size() < 40) {
      const Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      if (!is_admissible(p, k)) continue;
      a.waypoints.push_back({p[0], p[1], p[2], rng.uniform(-1, 1)});
      const Vec3 q{clamp_unit(p[0] + rng.uniform(-0.8, 0.8)), clamp_unit(p[1] + rng.uniform(-0.8, 0.8)),
                   clamp_unit(p[2] + rng.uniform(-0.8, 0.8))};
      b.waypoints.push_back({q[0], q[1], q[2], rng.uniform(-1, 1)});
    }
    const auto out = project_trajectory(a, b, k, cfg);
    for (std::size_t i = 0; i < out.size(); ++i) {
      ++waypoints;
      const Vec3 p = out[i].position();
      if (!is_admissible(p, k)) ++inadmissible;
      if (p == b[i].position()) continue;
      ++clipped;
      const Vec3 d = b[i].position() - a[i].position();
      const double len = norm(d);
      const Vec3 next = p + (cfg.step / len) * d;
      const Vec3 probe = norm(next - a[i].position()) >= len ? b[i].position() : next;
      const double along = dot(p - a[i].position(), d) / (len * len);
      const bool on_ray = along >= -1e-12 && along <= 1 + 1e-12 && norm(p - a[i].position() - along * d) < 1e-9;
      if (!on_ray || !(!is_admissible(probe, k) || touches_keep_out(probe, k))) ++far_from_boundary;
    }
    if (!(project_trajectory(a, out, k, cfg) == out)) ++not_idempotent;
  }
  v.require(inadmissible == 0, std::to_string(inadmissible) + " inadmissible waypoints");
  v.require(far_from_boundary == 0, std::to_string(far_from_boundary) + " clipped waypoints not within one step");
  v.require(not_idempotent == 0, std::to_string(not_idempotent) + " cases not idempotent");
  v.require(clipped >= 1000, "too few clipped waypoints to be meaningful");
  v.note("1000 cases, " + std::to_string(waypoints) + " waypoints, " + std::to_string(clipped) + " clipped, step " +
         fmt(cfg.step));
}

// ---------------------------------------------------------------------------
// A7

fs::path untrained_checkpoint() {
  const auto path = g_cache / "untrained.ckpt";
  auto c = ModelConfig::toy();
  c.init_seed = 77;
  save_checkpoint(LatteModel<float>(c), path.string(), {0, 0.0, "default"});
  return path;
}

void a7(Verdict& v) {
  const auto model = load_model<float>(untrained_checkpoint().string());
  const auto& c = model.config();
  GeneratorConfig g;
  g.lf_enabled = false;
  const auto samples = make_samples(25, 5, g);
  const auto out_path = g_cache / "attention.json";
  const auto j = export_attention(model, samples, out_path.string());
  v.require(json::parse(slurp(out_path)) == j, "written attention file differs from the returned maps");

  const std::size_t n = c.waypoints, s = c.memory_tokens();
  double worst_row = 0, upper = 0;
  std::size_t rows = 0;
  auto check = [&](const json& matrices, std::size_t r, std::size_t cols, std::size_t expect_count, bool causal,
                   const std::string& name) {
    v.require(matrices.size() == expect_count, name + " has " + std::to_string(matrices.size()) + " blocks");
    for (const auto& m : matrices) {
      v.require(m.size() == r, name + " row count");
      for (std::size_t i = 0; i < m.size(); ++i) {
        v.require(m[i].size() == cols, name + " column count");
        double total = 0;
        for (std::size_t k = 0; k < m[i].size(); ++k) {
          const double x = m[i][k].get<double>();
          total += x;
          if (causal && k > i) upper += std::abs(x);
        }
        worst_row = std::max(worst_row, std::abs(total - 1.0));
        ++rows;
      }
    }
  };
  check(j["encoder"], s, s, c.encoder_blocks, false, "encoder");
  check(j["decoder_self"], n, n, c.decoder_blocks, true, "decoder_self");
  check(j["decoder_cross"], n, s + 1, c.decoder_blocks, false, "decoder_cross");
  v.require(worst_row <= 1e-5, "row sum off by " + fmt(worst_row));
  v.require(upper == 0.0, "causal maps have upper-triangle mass " + fmt(upper));
  v.note(std::to_string(rows) + " rows, max |row sum - 1| " + fmt(worst_row) + ", upper-triangle mass " + fmt(upper));
}

// ---------------------------------------------------------------------------
// A8

json rest_scene() {
  return json::parse(R"([{"name": "sock", "position": [0.2, 0.1, 0.0]},
                         {"name": "coffee mug", "position": [-0.4, 0.3, 0.2]}])");
}

void rest_contract(Verdict& v) {
  SessionService service;
  httplib::Server server;
  install_routes(server, service);
  const int port = server.bind_to_any_port("127.0.0.1");
  if (port <= 0) {
    v.require(false, "cannot bind a local port");
    return;
  }
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  auto post = [&](const std::string& path, const json& body) {
    return client.Post(path, body.dump(), "application/json");
  };
  auto expect = [&](const httplib::Result& res, int status, const std::string& code, const std::string& what) {
    if (!res) {
      v.require(false, what + ": no response");
      return json();
    }
    v.require(res->status == status, what + ": status " + std::to_string(res->status));
    const auto body = json::parse(res->body, nullptr, false);
    if (!code.empty()) {
      v.require(body.contains("error") && body["error"]["code"] == code, what + ": error code");
    }
    return body;
  };

  const auto health = expect(client.Get("/healthz"), 200, "", "healthz");
  v.require(health.value("engines", json()) == json::array({"oracle"}), "healthz engines");

  const auto created = expect(post("/sessions", {{"scene", rest_scene()}}), 201, "", "create");
  const std::string id = created.value("id", "");
  const auto initial = expect(client.Get("/sessions/" + id), 200, "", "get");
  const auto preview = expect(post("/sessions/" + id + "/reshape", {{"text", "go up"}}), 200, "", "reshape");
  const auto current_after_preview = expect(client.Get("/sessions/" + id), 200, "", "get after preview");
  v.require(current_after_preview.value("current", json()) == initial.value("current", json()), "preview mutated state");
  if (preview.contains("original") && preview.contains("modified")) {
    const auto before = trajectory_from_json(preview["original"]), after = trajectory_from_json(preview["modified"]);
    bool up = true;
    for (std::size_t i = 0; i < before.size(); ++i) up = up && after[i].z >= before[i].z;
    v.require(up, "'go up' lowered a waypoint");
  }
  const auto accepted = expect(post("/sessions/" + id + "/accept", json::object()), 200, "", "accept");
  v.require(accepted.value("current", json()) == preview.value("clipped", json()), "accept did not commit the preview");
  const auto undone = expect(post("/sessions/" + id + "/undo", json::object()), 200, "", "undo");
  v.require(undone.value("current", json()) == initial.value("current", json()), "undo did not restore");

  expect(client.Post("/sessions", "{\"scene\": [", "application/json"), 400, "schema_error", "malformed body");
  expect(client.Get("/sessions/nope"), 404, "not_found", "unknown session");
  expect(post("/sessions/" + id + "/undo", json::object()), 409, "conflict", "undo on empty history");
  expect(post("/sessions/" + id + "/accept", json::object()), 409, "conflict", "accept without preview");
  const auto unparseable =
      expect(post("/sessions/" + id + "/reshape", {{"text", "sing a song"}}), 422, "unparseable_text", "unparseable");
  v.require(unparseable.contains("error") && unparseable["error"].contains("span"), "parse error without span");
  expect(post("/sessions/" + id + "/reshape", {{"text", "go closer to the kite"}}), 422, "unknown_target",
         "unknown target");
  expect(post("/sessions/" + id + "/reshape", json::object()), 400, "schema_error", "missing text");
  expect(post("/sessions", {{"scene", rest_scene()}, {"engine", "model"}}), 409, "conflict", "model engine");

  server.stop();
  thread.join();
}

void a8(Verdict& v) {
  DatasetOptions opts;
  opts.count = 300;
  opts.seed = 7;
  const auto a = g_cache / "det_a.jsonl", b = g_cache / "det_b.jsonl", c = g_cache / "det_c.jsonl";
  generate_dataset(opts, a.string());
  generate_dataset(opts, b.string());
  opts.seed = 8;
  generate_dataset(opts, c.string());
  const auto bytes = slurp(a);
  v.require(!bytes.empty() && bytes == slurp(b), "dataset generation is not byte-identical under a fixed seed");
  v.require(bytes != slurp(c), "different seeds produced the same dataset");

  const auto ckpt = untrained_checkpoint();
  const auto m1 = load_model<float>(ckpt.string());
  const auto m2 = load_model<float>(ckpt.string());
  GeneratorConfig g;
  g.lf_enabled = false;
  const auto samples = make_samples(20, 13, g);
  auto decode = [&](const LatteModel<float>& m) {
    const auto inputs = inputs_for(m, samples);
    std::vector<const ModelInput*> ptrs;
    for (const auto& in : inputs) ptrs.push_back(&in);
    std::string out;
    for (const auto& t : m.generate(ptrs)) out += to_json_value(t).dump() + "\n";
    return out;
  };
  const auto d1 = decode(m1);
  v.require(d1 == decode(m1) && d1 == decode(m2), "autoregressive decode is not byte-identical");

  rest_contract(v);
  v.note("dataset " + std::to_string(bytes.size()) + " bytes identical, decode of 20 samples identical, REST "
         "contract with the oracle engine and no checkpoint");
}

// ---------------------------------------------------------------------------
// A9

void a9(Verdict& v) {
  auto base_cfg = ModelConfig::full();
  base_cfg.feature_residual = false;
  auto residual_cfg = base_cfg;
  residual_cfg.feature_residual = true;
  const LatteModel<float> base(base_cfg), residual(residual_cfg);
  v.require(residual.network_parameter_count() > base.network_parameter_count(),
            "feature-residual variant is not larger than the base variant");
  v.require(residual.parameter_count() > base.parameter_count(), "totals with the token table do not keep the order");
  v.note("d=" + std::to_string(base_cfg.depth) + " base " + std::to_string(base.network_parameter_count()) +
         ", residual " + std::to_string(residual.network_parameter_count()) + " (with token table " +
         std::to_string(base.parameter_count()) + " / " + std::to_string(residual.parameter_count()) + ")");
}

// ---------------------------------------------------------------------------

struct Criterion {
  std::string id;
  std::string title;
  std::function<void(Verdict&)> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"A1", "autodiff correctness", a1},       {"A2", "oracle field properties", a2},
      {"A3", "overfit check", a3},              {"A4", "dataset-size trend", a4},
      {"A5", "locality behavior", a5},          {"A6", "constraint satisfaction", a6},
      {"A7", "attention export", a7},           {"A8", "determinism and contracts", a8},
      {"A9", "parameter-count sanity", a9},
  };
  return all;
}

bool run_criterion(const Criterion& c) {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  try {
    c.run(v);
  } catch (const std::exception& e) {
    v.require(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (c.id == "A1") v.require(secs < 60.0, "suite took " + fmt(secs) + " s");
  if (c.id == "A3") v.require(secs < 600.0, "run took " + fmt(secs) + " s");
  if (c.id == "A4") v.require(secs < 7200.0, "runs took " + fmt(secs) + " s");
  const bool ok = v.failures.empty();
  std::string detail;
  for (const auto& n : v.notes) detail += (detail.empty() ? "" : "; ") + n;
  std::cout << c.id << " " << (ok ? "PASS" : "FAIL") << " " << c.title << " (" << fmt(secs) << " s)"
            << (detail.empty() ? "" : ": " + detail) << std::endl;
  const std::size_t shown = std::min<std::size_t>(v.failures.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) std::cout << "  - " << v.failures[i] << '\n';
  if (v.failures.size() > shown) std::cout << "  - ... " << v.failures.size() - shown << " more\n";
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> wanted;
  g_cache = LATTE_ACCEPTANCE_CACHE;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--cache" && i + 1 < argc) {
      g_cache = argv[++i];
    } else {
      wanted.push_back(arg);
    }
  }
  fs::create_directories(g_cache);
  bool ok = true;
  std::size_t matched = 0;
  for (const auto& c : criteria()) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    ++matched;
    ok = run_criterion(c) && ok;
  }
  if (matched == 0) {
    std::cerr << "usage: latte_acceptance [--cache DIR] [A1 ... A9]\n";
    return 2;
  }
  return ok ? 0 : 1;
}
