#include "shadowsteer/guidance.hpp"

#include <cmath>
#include <limits>

#include "shadowsteer/errors.hpp"
#include "shadowsteer/image_io.hpp"
#include "shadowsteer/schedule.hpp"
#include "shadowsteer/tensor_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace shadowsteer {

void validate(const ShadowControl& control, int image_size) {
  if (!(control.strength >= 0.0 && control.strength <= 1.0)) throw InputError("strength must lie in [0, 1]");
  if (control.mask && control.light) throw InputError("control sets both a mask and a light; exactly one is allowed");
  if (control.mode == ControlMode::mask) {
    if (!control.mask) throw InputError("mask mode needs a mask");
    if (control.mask->height() != image_size || control.mask->width() != image_size) {
      throw InputError("mask must be " + std::to_string(image_size) + "x" + std::to_string(image_size));
    }
    for (float v : control.mask->values()) {
      if (v != 0.0f && v != 1.0f) throw InputError("mask values must be 0 or 1");
    }
    if (!(control.darkness >= 0.0 && control.darkness <= 1.0)) throw InputError("darkness must lie in [0, 1]");
  } else {
    if (!control.light) throw InputError("directional_light mode needs a light");
    const auto& l = *control.light;
    if (!std::isfinite(l.x) || !std::isfinite(l.y) || !std::isfinite(l.z)) throw InputError("light must be finite");
    if (!(l.z > 1.0)) throw InputError("light z must be above the terrain (z > 1)");
  }
}

json to_json(const ShadowControl& control) {
  json j;
  j["strength"] = control.strength;
  if (control.mode == ControlMode::mask) {
    j["mode"] = "mask";
    j["darkness"] = control.darkness;
    if (control.mask) j["mask"] = io::base64_encode(io::encode_mask_png(*control.mask));
  } else {
    j["mode"] = "directional_light";
    if (control.light) j["light"] = {control.light->x, control.light->y, control.light->z};
  }
  return j;
}

ShadowControl shadow_control_from_json(const json& j) {
  if (!j.is_object()) throw InputError("control must be a JSON object");
  ShadowControl c;
  try {
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "mask") {
      c.mode = ControlMode::mask;
    } else if (mode == "directional_light") {
      c.mode = ControlMode::directional_light;
    } else {
      throw InputError("mode must be 'mask' or 'directional_light'");
    }
    c.strength = j.value("strength", 1.0);
    c.darkness = j.value("darkness", 1.0);
    if (j.contains("mask") && !j["mask"].is_null()) {
      c.mask = io::decode_mask_png(io::base64_decode(j["mask"].get<std::string>()));
    }
    if (j.contains("light") && !j["light"].is_null()) {
      const auto& l = j["light"];
      if (!l.is_array() || l.size() != 3) throw InputError("light must be an [x, y, z] array");
      c.light = LightPosition{l[0].get<double>(), l[1].get<double>(), l[2].get<double>()};
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed control: ") + e.what());
  } catch (const IoError& e) {
    throw InputError(std::string("mask is not a readable PNG: ") + e.what());
  }
  return c;
}

void validate(const GuidanceConfig& cfg, const SamplerConfig& sampler) {
  if (cfg.intervention_step <= 0 || cfg.intervention_step >= sampler.inference_steps) {
    throw InputError("intervention_step must lie strictly between 0 and inference_steps");
  }
  if (!(cfg.lambda_shadow >= 0.0) || !(cfg.lambda_identity >= 0.0)) throw InputError("lambdas must be >= 0");
  if (cfg.max_iterations < 1) throw InputError("max_iterations must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw InputError("learning_rate must be > 0");
  if (!(cfg.divergence_factor > 1.0)) throw InputError("divergence_factor must be > 1");
}

namespace {

std::string to_string(IdentityTerm term) {
  switch (term) {
    case IdentityTerm::embedding:
      return "embedding";
    case IdentityTerm::input_l1:
      return "input_l1";
    case IdentityTerm::output_l1:
      return "output_l1";
  }
  return "embedding";
}

IdentityTerm identity_term_from_string(const std::string& s) {
  if (s == "embedding") return IdentityTerm::embedding;
  if (s == "input_l1") return IdentityTerm::input_l1;
  if (s == "output_l1") return IdentityTerm::output_l1;
  throw InputError("unknown identity term '" + s + "'");
}

}  // namespace

json to_json(const GuidanceConfig& cfg) {
  return {{"intervention_step", cfg.intervention_step},
          {"lambda_shadow", cfg.lambda_shadow},
          {"lambda_identity", cfg.lambda_identity},
          {"max_iterations", cfg.max_iterations},
          {"learning_rate", cfg.learning_rate},
          {"divergence_factor", cfg.divergence_factor},
          {"identity_term", to_string(cfg.identity_term)}};
}

GuidanceConfig guidance_config_from_json(const json& j) {
  GuidanceConfig cfg;
  try {
    cfg.intervention_step = j.value("intervention_step", cfg.intervention_step);
    cfg.lambda_shadow = j.value("lambda_shadow", cfg.lambda_shadow);
    cfg.lambda_identity = j.value("lambda_identity", cfg.lambda_identity);
    cfg.max_iterations = j.value("max_iterations", cfg.max_iterations);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.divergence_factor = j.value("divergence_factor", cfg.divergence_factor);
    if (j.contains("identity_term")) cfg.identity_term = identity_term_from_string(j["identity_term"]);
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed guidance config: ") + e.what());
  }
  return cfg;
}

GuidanceConfig guidance_preset(const std::string& name) {
  GuidanceConfig cfg;
  if (name == "standard") return cfg;
  if (name == "low_lr") {
    cfg.learning_rate = 2e-4;
    return cfg;
  }
  throw InputError("unknown guidance preset '" + name + "' (expected standard or low_lr)");
}

int guidance_iterations(double strength, int max_iterations) {
  if (!(strength >= 0.0 && strength <= 1.0)) throw InputError("strength must lie in [0, 1]");
  return static_cast<int>(std::lround(strength * max_iterations));
}

ShadowMap acquire_target_shadow(const ShadowControl& control, const ShadowMap& estimated_shadow,
                                const DepthMap& estimated_depth, const RaycastConfig& raycast) {
  if (control.mask && control.light) throw InputError("control sets both a mask and a light");
  if (control.mode == ControlMode::mask) {
    if (!control.mask) throw InputError("mask mode needs a mask");
    return apply_shadow_mask(estimated_shadow, *control.mask, control.darkness);
  }
  if (!control.light) throw InputError("directional_light mode needs a light");
  return raycast_shadow(estimated_depth, *control.light, raycast);
}

LossTerms guidance_loss(const torch::Tensor& s_current, const torch::Tensor& s_target, const torch::Tensor& i_current,
                        const torch::Tensor& i_ref, const GuidanceConfig& cfg) {
  if (!s_current.sizes().equals(s_target.sizes())) throw InputError("shadow maps differ in shape");
  if (!i_current.sizes().equals(i_ref.sizes())) throw InputError("identity embeddings differ in shape");
  for (const auto* t : {&s_current, &s_target, &i_current, &i_ref}) {
    if (t->detach().isnan().any().item<bool>()) throw InputError("guidance loss received NaN input");
  }
  LossTerms out;
  out.shadow = (s_current - s_target).abs().mean();
  auto cos = torch::cosine_similarity(i_current.reshape({1, -1}), i_ref.reshape({1, -1}), 1, 1e-12).squeeze(0);
  out.identity = 1.0 - cos;
  out.total = cfg.lambda_shadow * out.shadow + cfg.lambda_identity * out.identity;
  return out;
}

ShadowGuide::ShadowGuide(std::shared_ptr<const DenoisingBackend> backend, SDEstimator sd, IDEstimator id,
                         SamplerConfig sampler)
    : sampler_(std::move(backend), sampler), sd_(std::move(sd)), id_(std::move(id)) {
  const auto& b = sampler_.backend();
  if (sd_->arch().tap_channels != source_channels(b, sd_->arch().source)) {
    throw CheckpointError("shadow/depth estimator does not fit this backbone");
  }
  if (id_->arch().source != FeatureSource::internal || id_->arch().tap_channels != b.tap_channels()) {
    throw CheckpointError("identity estimator does not fit this backbone");
  }
  freeze(*sd_);
  freeze(*id_);
  alpha_bar_ = torch::tensor(sampler_.schedule().alpha_bar(), torch::kFloat64).to(torch::kFloat32);
}

Readout ShadowGuide::readout(const torch::Tensor& x, int step_index) {
  const int64_t t = sampler_.schedule().timestep(step_index);
  auto fwd = sampler_.unconditional_forward(x, step_index, true);
  UNetOutput raw{fwd.eps, fwd.pyramid->taps};
  auto ab = alpha_bar_.index({t}).reshape({1});
  auto sd_out = sd_->forward(estimator_inputs(sd_->arch().source, raw, x, ab));
  Readout r;
  r.shadow = sd_out.shadow;
  r.depth = sd_out.depth;
  r.embedding = id_->forward(raw.taps);
  r.eps_uncond = fwd.eps;
  return r;
}

OptimizeResult ShadowGuide::optimize_latent(const LatentState& state, const ShadowMap& target,
                                            const torch::Tensor& i_ref, const GuidanceConfig& cfg, int iterations) {
  validate(cfg, sampler_.config());
  if (iterations < 0) throw InputError("iterations must be >= 0");
  if (state.step_index != cfg.intervention_step) {
    throw PreconditionError("latent is not at the configured intervention step");
  }
  const auto tgt = to_tensor(target);
  const auto ref = i_ref.detach();

  OptimizeResult out;
  out.state = state;
  const torch::Tensor x_orig = state.x.detach();
  torch::Tensor eps_orig;

  auto terms_for = [&](const Readout& r, const torch::Tensor& x) {
    if (cfg.identity_term == IdentityTerm::embedding) return guidance_loss(r.shadow, tgt, r.embedding, ref, cfg);
    LossTerms t;
    t.shadow = (r.shadow - tgt).abs().mean();
    t.identity = cfg.identity_term == IdentityTerm::input_l1 ? (x - x_orig).abs().mean()
                                                             : (r.eps_uncond - eps_orig).abs().mean();
    t.total = cfg.lambda_shadow * t.shadow + cfg.lambda_identity * t.identity;
    return t;
  };

  torch::AutoGradMode grad_on(true);
  auto x = x_orig.clone().requires_grad_(true);
  torch::optim::Adam opt({x}, torch::optim::AdamOptions(cfg.learning_rate));
  torch::Tensor best = x_orig.clone();
  double best_total = std::numeric_limits<double>::infinity();

  for (int i = 0; i < iterations; ++i) {
    auto r = readout(x, state.step_index);
    if (!eps_orig.defined()) eps_orig = r.eps_uncond.detach();
    auto terms = terms_for(r, x);
    TraceEntry e{terms.shadow.item<double>(), terms.identity.item<double>(), terms.total.item<double>()};
    if (i == 0) {
      out.initial_total = e.total;
      out.initial_shadow_l1 = e.shadow;
    }
    if (e.total > cfg.divergence_factor * out.initial_total && i > 0) {
      out.diverged = true;
      break;
    }
    out.trace.push_back(e);
    if (e.total < best_total) {
      best_total = e.total;
      best = x.detach().clone();
    }
    opt.zero_grad();
    terms.total.backward();
    opt.step();
  }

  torch::Tensor final_x = out.diverged ? best : x.detach();
  {
    torch::NoGradGuard no_grad;
    auto r = readout(final_x, state.step_index);
    if (!eps_orig.defined()) eps_orig = r.eps_uncond;
    auto terms = terms_for(r, final_x);
    out.final_shadow_l1 = terms.shadow.item<double>();
    out.final_total = terms.total.item<double>();
    out.final_identity_cosine = (r.embedding * ref).sum().item<double>();
    if (iterations == 0) {
      out.initial_shadow_l1 = out.final_shadow_l1;
      out.initial_total = out.final_total;
    }
  }
  out.state.x = iterations == 0 ? state.x : final_x;
  return out;
}

ControlledResult ShadowGuide::generate_with_control(int label, std::uint64_t seed, const ShadowControl& control,
                                                    const GuidanceConfig& cfg, const ProgressFn& progress) {
  validate(cfg, sampler_.config());
  validate(control, backend().image_size());
  ControlledResult res;
  res.label = label;
  res.seed = seed;
  res.control = control;
  res.guidance = cfg;
  res.sampler = sampler_.config();
  res.backbone_hash = backend().weights_hash();
  res.iterations = guidance_iterations(control.strength, cfg.max_iterations);
  const int total = sampler_.config().inference_steps;

  auto hook = [&](const LatentState& st) -> torch::Tensor {
    if (progress) progress(st.step_index, total);
    if (st.step_index != cfg.intervention_step) return st.x;

    torch::Tensor i_ref;
    {
      torch::NoGradGuard no_grad;
      auto r = readout(st.x, st.step_index);
      ++res.reference_captures;
      i_ref = r.embedding;
      res.est_shadow_before = ShadowMap(grid_from_tensor(r.shadow));
      res.est_depth = DepthMap(grid_from_tensor(r.depth));
    }
    res.target_shadow = acquire_target_shadow(control, res.est_shadow_before, res.est_depth);
    auto opt = optimize_latent(st, res.target_shadow, i_ref, cfg, res.iterations);
    res.trace = opt.trace;
    res.diverged = opt.diverged;
    res.initial_shadow_l1 = opt.initial_shadow_l1;
    res.final_shadow_l1 = opt.final_shadow_l1;
    res.final_identity_cosine = opt.final_identity_cosine;
    {
      torch::NoGradGuard no_grad;
      res.est_shadow_after = ShadowMap(grid_from_tensor(readout(opt.state.x, st.step_index).shadow));
    }
    return opt.state.x;
  };
  auto gen = sampler_.generate(label, seed, hook);
  if (progress) progress(total, total);
  if (res.reference_captures != 1) throw PreconditionError("reference pass must run exactly once per generation");
  res.image = std::move(gen.image);
  return res;
}

json run_config_json(const ControlledResult& r) {
  return {{"schema", "shadowsteer/run-config"},
          {"version", 1},
          {"label", r.label},
          {"seed", r.seed},
          {"control", to_json(r.control)},
          {"guidance", to_json(r.guidance)},
          {"sampler", to_json(r.sampler)},
          {"backbone_hash", r.backbone_hash}};
}

RunRequest run_request_from_json(const json& config) {
  RunRequest req;
  try {
    req.label = config.at("label").get<int>();
    req.seed = config.at("seed").get<std::uint64_t>();
    req.control = shadow_control_from_json(config.at("control"));
    req.guidance = guidance_config_from_json(config.value("guidance", json::object()));
    req.sampler = sampler_config_from_json(config.value("sampler", json::object()));
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed run config: ") + e.what());
  }
  return req;
}

void write_run(const ControlledResult& r, const fs::path& dir) {
  fs::create_directories(dir);
  io::write_rgb_png(dir / "result.png", r.image);
  io::write_scalar_png(dir / "target_shadow.png", r.target_shadow);
  io::write_scalar_png(dir / "est_shadow_before.png", r.est_shadow_before);
  io::write_scalar_png(dir / "est_shadow_after.png", r.est_shadow_after);
  io::write_scalar_png(dir / "est_depth.png", r.est_depth);
  json trace = json::array();
  for (const auto& e : r.trace) trace.push_back({{"shadow", e.shadow}, {"identity", e.identity}, {"total", e.total}});
  io::write_text(dir / "trace.json", json{{"iterations", r.iterations},
                                          {"executed", r.trace.size()},
                                          {"diverged", r.diverged},
                                          {"initial_shadow_l1", r.initial_shadow_l1},
                                          {"final_shadow_l1", r.final_shadow_l1},
                                          {"final_identity_cosine", r.final_identity_cosine},
                                          {"trace", trace}}
                                         .dump(2));
  io::write_text(dir / "config.json", run_config_json(r).dump(2));
}

}  // namespace shadowsteer
