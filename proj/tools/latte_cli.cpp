#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "latte/checkpoint.hpp"
#include "latte/constraints.hpp"
#include "latte/oracle.hpp"
#include "latte/server.hpp"
#include "latte/session.hpp"
#include "latte/training.hpp"

using namespace latte;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("'" + path + "' is not valid JSON: " + e.what(), path);
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << '\n';
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text << '\n';
}

std::optional<TextEncoder> encoder_option(const std::string& spec) {
  if (spec.empty()) return std::nullopt;
  return TextEncoder::from_spec(spec);
}

httplib::Server* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-conditioned trajectory reshaping"};
  app.require_subcommand(1, 1);
  std::uint64_t seed = 0;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic JSON-lines dataset");
  DatasetOptions gen_opts;
  std::string gen_out;
  gen->add_option("--n", gen_opts.count, "Number of samples")->default_val(1000);
  gen->add_option("--seed", seed, "Random seed")->default_val(0);
  bool gen_lf = false;
  gen->add_flag("--lf-enabled", gen_lf, "Sample a locality factor per sample and store it");
  gen->add_flag("--augment", gen_opts.augment, "Apply random shift/scale augmentation");
  gen->add_option("--waypoints", gen_opts.generator.waypoints, "Waypoints per trajectory")->default_val(40);
  gen->add_option("--out", gen_out, "Output file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  TrainOptions tr_opts;
  std::string tr_data, tr_out, tr_preset = "toy", tr_encoder, tr_resume;
  bool tr_residual = false, tr_prenorm = false;
  tr->add_option("--data", tr_data, "Training dataset (JSON lines)")->required();
  tr->add_option("--out", tr_out, "Checkpoint to write")->required();
  tr->add_option("--metrics", tr_opts.metrics_path, "Per-epoch metrics file (JSON lines)");
  tr->add_option("--epochs", tr_opts.epochs, "Epochs")->default_val(500);
  tr->add_option("--batch-size", tr_opts.batch_size, "Batch size")->default_val(16);
  tr->add_option("--lr", tr_opts.learning_rate, "Base learning rate")->default_val(1e-4);
  tr->add_option("--warmup-epochs", tr_opts.warmup_epochs, "Linear warmup length in epochs")->default_val(15);
  tr->add_option("--warmup-steps", tr_opts.warmup_steps, "Linear warmup length in steps, replaces --warmup-epochs");
  tr->add_option("--max-steps", tr_opts.max_steps, "Stop after this many optimizer steps");
  tr->add_option("--val-fraction", tr_opts.val_fraction, "Validation share")->default_val(0.1);
  tr->add_flag("--augment", tr_opts.augment, "Random shift/scale augmentation at every epoch");
  tr->add_option("--input-noise", tr_opts.input_noise, "Noise std. dev. on teacher-forced decoder inputs")->default_val(0.1);
  tr->add_option("--preset", tr_preset, "Architecture preset")->check(CLI::IsMember({"toy", "full"}));
  tr->add_flag("--feature-residual", tr_residual, "Concatenate q_F to every decoder output");
  tr->add_flag("--pre-norm", tr_prenorm, "Pre-norm instead of post-norm blocks");
  tr->add_option("--encoder", tr_encoder, "Text encoder: default or import:<path>");
  tr->add_option("--resume", tr_resume, "Continue from this checkpoint");
  tr->add_option("--seed", seed, "Random seed")->default_val(0);

  // eval
  auto* ev = app.add_subcommand("eval", "Report MSE of a model or the oracle on a dataset");
  std::string ev_data, ev_ckpt, ev_engine = "model", ev_encoder, ev_out;
  ev->add_option("--data", ev_data, "Dataset (JSON lines)")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint (engine=model)");
  ev->add_option("--engine", ev_engine, "model or oracle")->check(CLI::IsMember({"model", "oracle"}));
  ev->add_option("--encoder", ev_encoder, "Text encoder override");
  ev->add_option("--out", ev_out, "Report file (default stdout)");
  ev->add_option("--seed", seed, "Random seed")->default_val(0);

  // reshape
  auto* rs = app.add_subcommand("reshape", "Reshape one trajectory from a command");
  std::string rs_in, rs_out, rs_text, rs_engine = "oracle", rs_ckpt, rs_region, rs_encoder;
  std::optional<double> rs_lf;
  bool rs_full = false;
  rs->add_option("--input", rs_in, "JSON with waypoints, objects and optionally text/lf")->required();
  rs->add_option("--out", rs_out, "Output file (default stdout)");
  rs->add_option("--text", rs_text, "Command text, overrides the input file");
  rs->add_option("--lf", rs_lf, "Locality factor in [0, 1]");
  rs->add_option("--engine", rs_engine, "model or oracle")->check(CLI::IsMember({"model", "oracle"}));
  rs->add_option("--checkpoint", rs_ckpt, "Checkpoint (engine=model)");
  rs->add_option("--region", rs_region, "Admissible region JSON file");
  rs->add_option("--encoder", rs_encoder, "Text encoder override");
  rs->add_flag("--full", rs_full, "Write original/modified/clipped/similarity instead of the clipped trajectory");
  rs->add_option("--seed", seed, "Random seed")->default_val(0);

  // export-attention
  auto* ea = app.add_subcommand("export-attention", "Write averaged attention maps as JSON");
  std::string ea_ckpt, ea_data, ea_out, ea_encoder;
  std::size_t ea_limit = 0;
  ea->add_option("--checkpoint", ea_ckpt, "Checkpoint")->required();
  ea->add_option("--data", ea_data, "Dataset (JSON lines)")->required();
  ea->add_option("--out", ea_out, "Output file (default stdout)");
  ea->add_option("--limit", ea_limit, "Use only the first samples");
  ea->add_option("--encoder", ea_encoder, "Text encoder override");
  ea->add_option("--seed", seed, "Random seed")->default_val(0);

  // serve
  auto* sv = app.add_subcommand("serve", "Run the HTTP session service");
  ServiceOptions sv_opts;
  std::string sv_host = "127.0.0.1", sv_static;
  int sv_port = 8080;
  if (const char* env = std::getenv("LATTE_PORT")) sv_port = std::atoi(env);
  sv->add_option("--port", sv_port, "Port (default $LATTE_PORT or 8080)");
  sv->add_option("--host", sv_host, "Bind address")->default_val("127.0.0.1");
  sv->add_option("--checkpoint", sv_opts.checkpoint, "Checkpoint enabling engine=model");
  sv->add_option("--encoder", sv_opts.encoder, "Text encoder override");
  sv->add_option("--snapshot", sv_opts.snapshot_path, "Restore sessions from and save them to this file");
  sv->add_option("--static-dir", sv_static, "Serve static UI assets from this directory");
  sv->add_option("--seed", seed, "Random seed")->default_val(0);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (*gen) {
      gen_opts.seed = seed;
      gen_opts.generator.lf_enabled = gen_lf;
      const auto summary = generate_dataset(gen_opts, gen_out);
      std::cerr << summary.to_json().dump() << '\n';
    } else if (*tr) {
      const auto samples = load_dataset(tr_data);
      if (samples.empty()) throw PreconditionError("dataset '" + tr_data + "' is empty");
      std::optional<LatteModel<float>> model;
      if (!tr_resume.empty()) {
        model.emplace(load_model<float>(tr_resume, encoder_option(tr_encoder)));
      } else {
        ModelConfig cfg = tr_preset == "full" ? ModelConfig::full() : ModelConfig::toy();
        cfg.waypoints = samples.front().original.size();
        cfg.lf_enabled = samples.front().lf.has_value();
        cfg.feature_residual = tr_residual;
        cfg.post_norm = !tr_prenorm;
        cfg.init_seed = seed;
        auto enc = encoder_option(tr_encoder).value_or(TextEncoder::default_encoder());
        if (!enc.trainable()) cfg.semantic_dim = enc.imported_dim();
        model.emplace(cfg, std::move(enc));
      }
      tr_opts.seed = seed;
      tr_opts.checkpoint_path = tr_out;
      tr_opts.on_epoch = [](const EpochMetrics& m) { std::cerr << m.to_json().dump() << '\n'; };
      const auto result = train(*model, samples, tr_opts);
      std::cerr << json{{"best_epoch", result.best_epoch}, {"best_val_mse", result.best_val_mse}, {"steps", result.steps},
                        {"parameters", model->parameter_count()}}
                       .dump()
                << '\n';
    } else if (*ev) {
      const auto samples = load_dataset(ev_data);
      EvalReport report;
      if (ev_engine == "oracle") {
        std::vector<Trajectory> preds;
        for (const auto& s : samples) preds.push_back(oracle_reshape(s.original, s.intent, s.scene));
        report = evaluate_predictions(samples, preds);
      } else {
        if (ev_ckpt.empty()) throw PreconditionError("--checkpoint is required with --engine model");
        report = evaluate(load_model<float>(ev_ckpt, encoder_option(ev_encoder)), samples);
      }
      write_text(ev_out, report.to_json().dump());
    } else if (*rs) {
      const auto in = read_json_file(rs_in);
      if (!in.is_object()) throw SchemaError("expected an object at input");
      const auto traj = trajectory_from_json(in.at("waypoints"), "waypoints");
      const auto scene = in.contains("objects") ? scene_from_json(in["objects"], "objects") : Scene{};
      std::string text = rs_text;
      if (text.empty() && in.contains("text")) text = in["text"].get<std::string>();
      if (text.empty()) throw PreconditionError("no command text given (use --text or a \"text\" field)");
      if (!rs_lf && in.contains("lf") && !in["lf"].is_null()) rs_lf = in["lf"].get<double>();
      AdmissibleRegion region;
      if (!rs_region.empty()) region = region_from_json(read_json_file(rs_region));
      else if (in.contains("region")) region = region_from_json(in["region"]);

      ReshapeResult r;
      r.text = text;
      r.original = traj;
      if (rs_engine == "oracle") {
        r.lf = rs_lf.value_or(kDefaultLocality);
        const auto intent = parse_intent(text, &scene, *r.lf);
        r.intent = intent;
        r.modified = oracle_reshape(traj, intent, scene);
        r.similarity = object_similarity(TextEncoder::default_encoder(), text, scene, kDefaultMaxObjects);
      } else {
        if (rs_ckpt.empty()) throw PreconditionError("--checkpoint is required with --engine model");
        const auto model = load_model<float>(rs_ckpt, encoder_option(rs_encoder));
        if (model.config().lf_enabled) r.lf = rs_lf.value_or(kDefaultLocality);
        ModelInput mi{traj, scene, model.prepare_features(text, scene, r.lf)};
        r.similarity = mi.features.similarity;
        r.modified = model.generate(mi);
      }
      r.clipped = project_trajectory(traj, r.modified, region);
      write_text(rs_out, rs_full ? r.to_json().dump() : to_json_value(r.clipped).dump());
    } else if (*ea) {
      auto samples = load_dataset(ea_data);
      if (ea_limit > 0 && samples.size() > ea_limit) samples.resize(ea_limit);
      const auto model = load_model<float>(ea_ckpt, encoder_option(ea_encoder));
      write_text(ea_out, export_attention(model, samples).dump());
    } else if (*sv) {
      sv_opts.seed = seed;
      SessionService service(sv_opts);
      httplib::Server server;
      install_routes(server, service, sv_static);
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::cerr << "listening on " << sv_host << ":" << sv_port
                << (service.has_model() ? " (model + oracle)" : " (oracle only)") << '\n';
      if (!server.listen(sv_host, sv_port)) throw IoError("cannot listen on " + sv_host + ":" + std::to_string(sv_port));
      service.save_snapshot();
    }
  } catch (const ParseError& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << " (at '" << e.span() << "')\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
