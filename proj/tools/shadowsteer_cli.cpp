// shadowsteer command-line tool: data synthesis, training, controlled
// generation, ablations and the HTTP service.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "shadowsteer/diffusion.hpp"
#include "shadowsteer/errors.hpp"
#include "shadowsteer/estimators.hpp"
#include "shadowsteer/evaluation.hpp"
#include "shadowsteer/guidance.hpp"
#include "shadowsteer/image_io.hpp"
#include "shadowsteer/log.hpp"
#include "shadowsteer/scene.hpp"
#include "shadowsteer/service.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace shadowsteer;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitCheckpoint = 3;

// Expands `--config file.json` into ordinary flags placed before the explicit
// ones. Every option keeps its last value, so explicit flags win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a == "--config") {
      if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a file path");
      path = args[++i];
    } else if (a.rfind("--config=", 0) == 0) {
      path = a.substr(9);
    } else {
      rest.push_back(a);
    }
  }
  if (!path) return rest;
  json j;
  try {
    j = json::parse(io::read_text(*path));
  } catch (const json::parse_error& e) {
    throw CLI::ValidationError("--config", std::string("not valid JSON: ") + e.what());
  } catch (const IoError& e) {
    throw CLI::ValidationError("--config", e.what());
  }
  if (!j.is_object()) throw CLI::ValidationError("--config", "must hold a JSON object");
  static const std::set<std::string> kSubcommands = {"synth-data", "train-diffusion", "train-sd", "train-id",
                                                     "generate",   "ablate",          "serve"};
  std::size_t sub = 0;
  while (sub < rest.size() && !kSubcommands.count(rest[sub])) ++sub;
  if (sub == rest.size()) throw CLI::ValidationError("--config", "needs a subcommand");
  const json& section = j.contains(rest[sub]) && j[rest[sub]].is_object() ? j[rest[sub]] : j;
  std::vector<std::string> injected;
  for (const auto& [key, value] : section.items()) {
    if (value.is_object()) continue;
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) {
        if (!joined.empty()) joined += ",";
        joined += v.is_string() ? v.get<std::string>() : v.dump();
      }
      injected.push_back(flag);
      injected.push_back(joined);
    } else if (!value.is_null()) {
      injected.push_back(flag);
      injected.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  rest.insert(rest.begin() + static_cast<long>(sub) + 1, injected.begin(), injected.end());
  return rest;
}

void require_checkpoint(const fs::path& path, const std::string& what, const std::string& hint) {
  if (path.empty()) throw CheckpointError("no " + what + " checkpoint given. " + hint);
  if (!fs::exists(path)) throw CheckpointError(what + " checkpoint " + path.string() + " does not exist. " + hint);
}

const std::string kDiffusionHint = "Train one with: shadowsteer train-diffusion --data DATA --out diffusion.pt";
const std::string kSdHint = "Train one with: shadowsteer train-sd --data DATA --diffusion diffusion.pt --out sd.pt";
const std::string kIdHint = "Train one with: shadowsteer train-id --data DATA --diffusion diffusion.pt --out id.pt";

void write_report(const fs::path& checkpoint, const json& report) {
  const fs::path path = checkpoint.string() + ".report.json";
  io::write_text(path, report.dump(2));
  std::cout << "report: " << path.string() << "\n";
}

struct GuidanceFlags {
  std::string preset = "standard";
  std::optional<int> intervention_step;
  std::optional<double> lambda_shadow;
  std::optional<double> lambda_identity;
  std::optional<int> max_iterations;
  std::optional<double> learning_rate;
  std::optional<std::string> identity_term;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "Guidance preset")->check(CLI::IsMember({"standard", "low_lr"}));
    app->add_option("--intervention-step", intervention_step, "Sampling step at which the latent is optimised");
    app->add_option("--lambda-shadow", lambda_shadow, "Weight of the shadow term");
    app->add_option("--lambda-identity", lambda_identity, "Weight of the identity term");
    app->add_option("--max-iterations", max_iterations, "Optimiser iterations at strength 1");
    app->add_option("--guidance-lr", learning_rate, "Latent optimiser learning rate");
    app->add_option("--identity-term", identity_term, "embedding, input_l1 or output_l1")
        ->check(CLI::IsMember({"embedding", "input_l1", "output_l1"}));
  }

  GuidanceConfig build() const {
    GuidanceConfig cfg = guidance_preset(preset);
    if (intervention_step) cfg.intervention_step = *intervention_step;
    if (lambda_shadow) cfg.lambda_shadow = *lambda_shadow;
    if (lambda_identity) cfg.lambda_identity = *lambda_identity;
    if (max_iterations) cfg.max_iterations = *max_iterations;
    if (learning_rate) cfg.learning_rate = *learning_rate;
    if (identity_term) cfg = guidance_config_from_json([&] {
      auto j = to_json(cfg);
      j["identity_term"] = *identity_term;
      return j;
    }());
    return cfg;
  }
};

struct SamplerFlags {
  std::optional<double> cfg_scale;
  std::optional<int> steps;

  void add(CLI::App* app) {
    app->add_option("--cfg-scale", cfg_scale, "Classifier-free guidance scale");
    app->add_option("--steps", steps, "Sampling steps");
  }
  SamplerConfig build() const {
    SamplerConfig cfg;
    if (cfg_scale) cfg.cfg_scale = *cfg_scale;
    if (steps) cfg.inference_steps = *steps;
    validate(cfg);
    return cfg;
  }
};

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::optional<ShadowControl> build_control(const std::string& mask, const std::string& light_text, double darkness,
                                           double strength) {
  if (!mask.empty() && !light_text.empty()) throw InputError("give either --mask or --light, not both");
  if (mask.empty() && light_text.empty()) return std::nullopt;
  std::vector<double> light;
  for (const auto& part : split(light_text)) {
    try {
      light.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw InputError("--light takes three numbers x,y,z");
    }
  }
  ShadowControl c;
  c.darkness = darkness;
  c.strength = strength;
  if (!mask.empty()) {
    c.mode = ControlMode::mask;
    c.mask = io::read_mask_png(mask);
  } else {
    if (light.size() != 3) throw InputError("--light takes x,y,z");
    c.mode = ControlMode::directional_light;
    c.light = LightPosition{light[0], light[1], light[2]};
  }
  return c;
}

service::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shadow-controlled portrait diffusion"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");
  app.set_help_all_flag("--help-all");
  // Parsed out before CLI11 sees the arguments; declared for --help.
  std::string config_path;
  app.add_option("--config", config_path, "JSON file of option values; explicit flags override it");

  auto defaults = [](CLI::App* sub) {
    sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    return sub;
  };

  // synth-data
  auto* synth = defaults(app.add_subcommand("synth-data", "Render the synthetic portrait corpus"));
  fs::path synth_out;
  int synth_identities = 200, synth_lights = 6, synth_size = 32;
  std::uint64_t synth_seed = 1;
  scene::BuildOptions synth_opts;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--identities", synth_identities, "Number of identities")->capture_default_str();
  synth->add_option("--lights", synth_lights, "Lightings per identity")->capture_default_str();
  synth->add_option("--size", synth_size, "Image side in pixels")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Corpus seed")->capture_default_str();
  synth->add_option("--val-fraction", synth_opts.val_fraction, "Held-out fraction")->capture_default_str();
  synth->add_flag("--overwrite", synth_opts.overwrite, "Replace an existing corpus");

  // train-diffusion
  auto* tdiff = defaults(app.add_subcommand("train-diffusion", "Train the label-conditioned diffusion model"));
  fs::path tdiff_data, tdiff_out, tdiff_resume;
  DiffusionTrainConfig tdiff_cfg;
  tdiff->add_option("--data", tdiff_data, "Corpus directory")->required();
  tdiff->add_option("--out", tdiff_out, "Checkpoint path")->required();
  tdiff->add_option("--resume", tdiff_resume, "Continue from this checkpoint");
  tdiff->add_option("--steps", tdiff_cfg.steps, "Optimisation steps")->capture_default_str();
  tdiff->add_option("--batch-size", tdiff_cfg.batch_size)->capture_default_str();
  tdiff->add_option("--lr", tdiff_cfg.learning_rate)->capture_default_str();
  tdiff->add_option("--label-dropout", tdiff_cfg.label_dropout)->capture_default_str();
  tdiff->add_option("--grad-clip", tdiff_cfg.grad_clip)->capture_default_str();
  tdiff->add_option("--base-channels", tdiff_cfg.base_channels)->capture_default_str();
  tdiff->add_option("--train-steps", tdiff_cfg.train_steps, "Noise schedule length")->capture_default_str();
  tdiff->add_option("--seed", tdiff_cfg.seed)->capture_default_str();
  tdiff->add_option("--log-every", tdiff_cfg.log_every)->capture_default_str();
  tdiff->add_option("--checkpoint-every", tdiff_cfg.checkpoint_every)->capture_default_str();

  // train-sd / train-id share most flags.
  struct EstFlags {
    fs::path data, diffusion, out;
    std::string preset = "standard";
    std::optional<int> epochs, batch_size, t_min, t_max, width, embedding_dim;
    std::optional<double> lr, weight_decay, margin;
    std::optional<std::uint64_t> seed;
    std::string source = "internal";

    EstimatorTrainConfig build() const {
      auto c = estimator_preset(preset);
      if (epochs) c.epochs = *epochs;
      if (batch_size) c.batch_size = *batch_size;
      if (t_min) c.t_min = *t_min;
      if (t_max) c.t_max = *t_max;
      if (width) c.width = *width;
      if (embedding_dim) c.embedding_dim = *embedding_dim;
      if (lr) c.learning_rate = *lr;
      if (weight_decay) c.weight_decay = *weight_decay;
      if (margin) c.margin = *margin;
      if (seed) c.seed = *seed;
      c.source = feature_source_from_string(source);
      validate(c);
      return c;
    }
  };
  auto add_est = [&](CLI::App* sub, EstFlags& f) {
    sub->add_option("--data", f.data, "Corpus directory")->required();
    sub->add_option("--diffusion", f.diffusion, "Frozen diffusion checkpoint")->required();
    sub->add_option("--out", f.out, "Checkpoint path")->required();
    sub->add_option("--preset", f.preset, "Hyper-parameter preset")->check(CLI::IsMember({"standard", "low_lr"}));
    sub->add_option("--epochs", f.epochs);
    sub->add_option("--lr", f.lr);
    sub->add_option("--weight-decay", f.weight_decay);
    sub->add_option("--t-min", f.t_min, "Smallest training timestep");
    sub->add_option("--t-max", f.t_max, "Training timesteps are drawn below this");
    sub->add_option("--width", f.width, "Fused feature width");
    sub->add_option("--seed", f.seed);
  };
  auto* tsd = defaults(app.add_subcommand("train-sd", "Train the shadow/depth estimator on frozen features"));
  EstFlags sd_flags;
  add_est(tsd, sd_flags);
  tsd->add_option("--batch-size", sd_flags.batch_size);
  tsd->add_option("--source", sd_flags.source, "internal, unet_output or predicted_x0")
      ->check(CLI::IsMember({"internal", "unet_output", "predicted_x0"}));
  auto* tid = defaults(app.add_subcommand("train-id", "Train the identity estimator with a triplet loss"));
  EstFlags id_flags;
  add_est(tid, id_flags);
  tid->add_option("--margin", id_flags.margin);
  tid->add_option("--embedding-dim", id_flags.embedding_dim);

  // generate
  auto* gen = defaults(app.add_subcommand("generate", "Sample a portrait, optionally under a shadow control"));
  fs::path gen_diffusion, gen_sd, gen_id, gen_out, gen_replay;
  int gen_label = 0;
  std::uint64_t gen_seed = 0;
  std::string gen_mask;
  std::string gen_light;
  double gen_darkness = 1.0, gen_strength = 1.0;
  GuidanceFlags gen_guidance;
  SamplerFlags gen_sampler;
  gen->add_option("--diffusion", gen_diffusion, "Diffusion checkpoint")->required();
  gen->add_option("--sd", gen_sd, "Shadow/depth estimator checkpoint");
  gen->add_option("--id", gen_id, "Identity estimator checkpoint");
  gen->add_option("--out", gen_out, "Run directory")->required();
  gen->add_option("--label", gen_label, "Conditioning identity label")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--mask", gen_mask, "Binary PNG; white pixels become shadow")->check(CLI::ExistingFile);
  gen->add_option("--light", gen_light, "Point light x,y,z; x and y span the image as [0,1], z > 1 is height");
  gen->add_option("--darkness", gen_darkness, "Shadow value under the mask")->capture_default_str();
  gen->add_option("--strength", gen_strength, "Fraction of the optimisation budget")->capture_default_str();
  gen->add_option("--replay", gen_replay, "config.json of an earlier run; other run flags are ignored")
      ->check(CLI::ExistingFile);
  gen_guidance.add(gen);
  gen_sampler.add(gen);

  // ablate
  auto* abl = defaults(app.add_subcommand("ablate", "Run the guidance ablation variants"));
  fs::path abl_diffusion, abl_sd, abl_id, abl_sd_unet, abl_sd_x0, abl_data, abl_out;
  std::string abl_variants;
  int abl_seeds = 20;
  std::uint64_t abl_seed_base = 0;
  GuidanceFlags abl_guidance;
  SamplerFlags abl_sampler;
  abl->add_option("--diffusion", abl_diffusion)->required();
  abl->add_option("--sd", abl_sd, "Main shadow/depth estimator (also the scorer)")->required();
  abl->add_option("--id", abl_id, "Identity estimator")->required();
  abl->add_option("--sd-unet-output", abl_sd_unet, "Estimator trained with --source unet_output (variant d)");
  abl->add_option("--sd-predicted-x0", abl_sd_x0, "Estimator trained with --source predicted_x0 (variant e)");
  abl->add_option("--data", abl_data, "Corpus; conditioning labels come from its training identities");
  abl->add_option("--out", abl_out, "Report directory")->required();
  abl->add_option("--variants", abl_variants, "Comma-separated tags or letters, default all");
  abl->add_option("--seeds", abl_seeds, "Seeds per variant")->capture_default_str();
  abl->add_option("--seed-base", abl_seed_base)->capture_default_str();
  abl_guidance.add(abl);
  abl_sampler.add(abl);

  // serve
  auto* srv = defaults(app.add_subcommand("serve", "Run the HTTP service"));
  service::Options srv_opts;
  srv->add_option("--diffusion", srv_opts.diffusion_checkpoint)->envname("SD_DIRECTOR_DIFFUSION_CKPT")->required();
  srv->add_option("--sd", srv_opts.sd_checkpoint)->envname("SD_DIRECTOR_SD_CKPT");
  srv->add_option("--id", srv_opts.id_checkpoint)->envname("SD_DIRECTOR_ID_CKPT");
  srv->add_option("--run-store", srv_opts.run_store)->envname("SD_DIRECTOR_RUN_STORE")->capture_default_str();
  srv->add_option("--host", srv_opts.host)->envname("SD_DIRECTOR_HOST")->capture_default_str();
  srv->add_option("--port", srv_opts.port)->envname("SD_DIRECTOR_PORT")->capture_default_str();
  srv->add_option("--pool-size", srv_opts.pool_size)->envname("SD_DIRECTOR_POOL_SIZE")->capture_default_str();
  srv->add_option("--queue-limit", srv_opts.queue_limit)->envname("SD_DIRECTOR_QUEUE_LIMIT")->capture_default_str();

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    log::set_level(log_level);
    if (*synth) {
      auto m = scene::build_dataset(synth_identities, synth_lights, synth_size, synth_out, synth_seed, synth_opts);
      std::cout << "wrote " << m.samples.size() << " samples (" << m.train.size() << " train, " << m.val.size()
                << " val) to " << synth_out.string() << "\n";
    } else if (*tdiff) {
      std::optional<fs::path> resume;
      if (!tdiff_resume.empty()) {
        require_checkpoint(tdiff_resume, "resume", "Pass the checkpoint written by an earlier train-diffusion run.");
        resume = tdiff_resume;
      }
      const auto manifest = scene::load_manifest(tdiff_data);
      const auto r = train_diffusion(manifest, tdiff_cfg, tdiff_out, resume);
      std::cout << "loss " << r.initial_loss << " -> " << r.final_loss << " in " << r.seconds << " s\n";
      write_report(tdiff_out, {{"config", to_json(tdiff_cfg)},
                               {"initial_loss", r.initial_loss},
                               {"final_loss", r.final_loss},
                               {"seconds", r.seconds},
                               {"losses", r.losses}});
    } else if (*tsd || *tid) {
      const bool sd = static_cast<bool>(*tsd);
      const auto& f = sd ? sd_flags : id_flags;
      require_checkpoint(f.diffusion, "diffusion", kDiffusionHint);
      const auto cfg = f.build();
      const auto manifest = scene::load_manifest(f.data);
      std::shared_ptr<const DenoisingBackend> backend = DiffusionModel::load(f.diffusion);
      const auto r = sd ? train_sd_estimator(manifest, backend, cfg, f.out)
                        : train_id_estimator(manifest, backend, cfg, f.out);
      if (sd) {
        std::cout << "val shadow L1 " << r.final_sd.shadow_l1 << " (constant " << r.final_sd.const_shadow_l1
                  << "), depth L1 " << r.final_sd.depth_l1 << " (constant " << r.final_sd.const_depth_l1 << ")\n";
      } else {
        std::cout << "val triplet accuracy " << r.final_id.triplet_accuracy << " over " << r.final_id.triplets
                  << " triplets\n";
      }
      write_report(f.out, {{"config", to_json(cfg)}, {"report", to_json(r)}});
    } else if (*gen) {
      require_checkpoint(gen_diffusion, "diffusion", kDiffusionHint);
      std::shared_ptr<const DenoisingBackend> backend = DiffusionModel::load(gen_diffusion);
      std::optional<RunRequest> req;
      if (!gen_replay.empty()) {
        req = run_request_from_json(json::parse(io::read_text(gen_replay)));
      } else if (auto control = build_control(gen_mask, gen_light, gen_darkness, gen_strength)) {
        req = RunRequest{gen_label, gen_seed, *control, gen_guidance.build(), gen_sampler.build()};
      }
      if (!req) {
        const auto sampler_cfg = gen_sampler.build();
        Sampler sampler(backend, sampler_cfg);
        const auto result = sampler.generate(gen_label, gen_seed);
        fs::create_directories(gen_out);
        io::write_rgb_png(gen_out / "result.png", result.image);
        io::write_text(gen_out / "config.json", json{{"schema", "shadowsteer/generation"},
                                                     {"version", 1},
                                                     {"label", gen_label},
                                                     {"seed", gen_seed},
                                                     {"sampler", to_json(sampler_cfg)},
                                                     {"backbone_hash", backend->weights_hash()}}
                                                    .dump(2));
        std::cout << "wrote " << (gen_out / "result.png").string() << "\n";
      } else {
        require_checkpoint(gen_sd, "shadow/depth estimator", kSdHint);
        require_checkpoint(gen_id, "identity estimator", kIdHint);
        ShadowGuide guide(backend, load_sd_estimator(gen_sd, *backend), load_id_estimator(gen_id, *backend),
                          req->sampler);
        const auto r = guide.generate_with_control(req->label, req->seed, req->control, req->guidance);
        write_run(r, gen_out);
        std::cout << "shadow L1 " << r.initial_shadow_l1 << " -> " << r.final_shadow_l1 << " over " << r.trace.size()
                  << " iterations" << (r.diverged ? " (diverged, kept best latent)" : "") << "\n"
                  << "wrote " << gen_out.string() << "\n";
      }
    } else if (*abl) {
      require_checkpoint(abl_diffusion, "diffusion", kDiffusionHint);
      require_checkpoint(abl_sd, "shadow/depth estimator", kSdHint);
      require_checkpoint(abl_id, "identity estimator", kIdHint);
      auto tags = abl_variants.empty() ? all_ablation_tags() : split(abl_variants);
      std::set<FeatureSource> needed;
      for (const auto& t : tags) needed.insert(ablation_variant(t).sd_source);
      AblationModels models;
      auto model = DiffusionModel::load(abl_diffusion);
      models.backend = model;
      models.sd = load_sd_estimator(abl_sd, *model);
      models.id = load_id_estimator(abl_id, *model);
      if (needed.count(FeatureSource::unet_output)) {
        require_checkpoint(abl_sd_unet, "variant d estimator",
                           "Train one with: shadowsteer train-sd --source unet_output ... and pass --sd-unet-output.");
        models.variant_sd.emplace(FeatureSource::unet_output, load_sd_estimator(abl_sd_unet, *model));
      }
      if (needed.count(FeatureSource::predicted_x0)) {
        require_checkpoint(abl_sd_x0, "variant e estimator",
                           "Train one with: shadowsteer train-sd --source predicted_x0 ... and pass --sd-predicted-x0.");
        models.variant_sd.emplace(FeatureSource::predicted_x0, load_sd_estimator(abl_sd_x0, *model));
      }
      AblationSettings settings;
      settings.n_seeds = abl_seeds;
      settings.seed_base = abl_seed_base;
      if (!abl_data.empty()) {
        const auto manifest = scene::load_manifest(abl_data);
        std::set<int> ids;
        for (const auto& id : manifest.train) ids.insert(manifest.entry(id).identity_id);
        settings.labels.assign(ids.begin(), ids.end());
      } else {
        for (int l = 0; l < model->num_labels(); ++l) settings.labels.push_back(l);
      }
      settings.control.mode = ControlMode::mask;
      settings.control.mask = half_face_mask(model->image_size());
      settings.base = abl_guidance.build();
      settings.sampler = abl_sampler.build();
      const auto report = run_ablation(tags, settings, models);
      fs::create_directories(abl_out);
      io::write_text(abl_out / "ablation_report.json", to_json(report).dump(2));
      io::write_text(abl_out / "ablation_report.md", to_markdown(report));
      std::cout << to_markdown(report);
    } else if (*srv) {
      service::Service service(srv_opts);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      service.listen();
      g_service = nullptr;
    }
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
