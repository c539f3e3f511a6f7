#include "shadowsteer/evaluation.hpp"

#include <fmt/format.h>

#include <numeric>
#include <set>

#include "shadowsteer/errors.hpp"
#include "shadowsteer/log.hpp"
#include "shadowsteer/schedule.hpp"
#include "shadowsteer/tensor_util.hpp"

using nlohmann::json;

namespace shadowsteer {
namespace {

constexpr std::uint64_t kReadoutNoiseSeed = 0x7eadULL;

/// Unconditional t = 50 pass over a batch of finished images with shared noise.
UNetOutput light_noise_pass(const std::vector<const RgbImage*>& images, const DenoisingBackend& backend,
                            bool tap, torch::Tensor& x_t, torch::Tensor& alpha_bar) {
  const int s = backend.image_size();
  std::vector<torch::Tensor> rows;
  for (const auto* img : images) {
    if (img->height() != s || img->width() != s) throw InputError("image size does not match the model");
    rows.push_back(image_to_model(to_tensor(*img)));
  }
  auto x0 = torch::cat(rows, 0);
  auto noise = torch::randn({1, backend.image_channels(), s, s}, make_generator(kReadoutNoiseSeed), torch::kFloat32)
                   .expand_as(x0);
  NoiseSchedule schedule(backend.train_steps(), 1, backend.cosine_offset());
  const double ab = schedule.alpha_bar_at(kReadoutTimestep);
  x_t = add_noise(schedule, x0, kReadoutTimestep, noise.contiguous());
  const int64_t n = x0.size(0);
  alpha_bar = torch::full({n}, ab, torch::kFloat32);
  return backend.predict(x_t, torch::full({n}, static_cast<int64_t>(kReadoutTimestep), torch::kInt64),
                         torch::full({n}, static_cast<int64_t>(backend.null_label()), torch::kInt64), tap);
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double toy_cvs(const RgbImage& a, const RgbImage& b, IDEstimator& id, const DenoisingBackend& backend) {
  if (!id->trained()) throw PreconditionError("toy_cvs needs a trained identity estimator");
  torch::NoGradGuard no_grad;
  torch::Tensor x_t, ab;
  // One image per pass keeps the score independent of argument order.
  auto embed = [&](const RgbImage& img) {
    auto out = light_noise_pass({&img}, backend, true, x_t, ab);
    return id->forward(out.taps);
  };
  auto ea = embed(a);
  auto eb = &a == &b ? ea : embed(b);
  return (ea * eb).sum().item<double>();
}

ShadowMap estimate_image_shadow(const RgbImage& image, SDEstimator& sd, const DenoisingBackend& backend) {
  if (!sd->trained()) throw PreconditionError("shadow estimation needs a trained shadow/depth estimator");
  torch::NoGradGuard no_grad;
  torch::Tensor x_t, ab;
  const bool tap = sd->arch().source == FeatureSource::internal;
  auto out = light_noise_pass({&image}, backend, tap, x_t, ab);
  return ShadowMap(grid_from_tensor(sd->forward(estimator_inputs(sd->arch().source, out, x_t, ab)).shadow));
}

double shadow_compliance(const ControlledResult& result, SDEstimator& sd, const DenoisingBackend& backend) {
  auto est = estimate_image_shadow(result.image, sd, backend);
  if (!est.same_shape(result.target_shadow)) throw InputError("target shadow does not match the image size");
  double sum = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) sum += std::abs(est.values()[i] - result.target_shadow.values()[i]);
  return sum / static_cast<double>(est.size());
}

std::vector<std::string> all_ablation_tags() {
  return {"a_full", "b_latter_steps", "c_last_step", "d_unet_output_features", "e_rgb_space", "f_l1_input",
          "g_l1_output"};
}

AblationVariant ablation_variant(const std::string& tag_or_letter) {
  std::string tag;
  for (const auto& t : all_ablation_tags()) {
    if (t == tag_or_letter || (tag_or_letter.size() == 1 && t[0] == tag_or_letter[0])) tag = t;
  }
  if (tag.empty()) throw InputError("unknown ablation variant '" + tag_or_letter + "'");
  AblationVariant v;
  v.tag = tag;
  switch (tag[0]) {
    case 'a':
      v.description = "full method: internal features, step 40, identity embedding";
      break;
    case 'b':
      v.description = "intervention at a latter step (80 of 100)";
      v.guidance.intervention_step = 80;
      break;
    case 'c':
      v.description = "intervention at the last step (99 of 100)";
      v.guidance.intervention_step = 99;
      break;
    case 'd':
      v.description = "shadow estimator reads the UNet noise output";
      v.sd_source = FeatureSource::unet_output;
      break;
    case 'e':
      v.description = "shadow estimator reads the predicted x0 in RGB space";
      v.sd_source = FeatureSource::predicted_x0;
      break;
    case 'f':
      v.description = "identity term is L1 on the latent input";
      v.guidance.identity_term = IdentityTerm::input_l1;
      break;
    case 'g':
      v.description = "identity term is L1 on the UNet output";
      v.guidance.identity_term = IdentityTerm::output_l1;
      break;
  }
  return v;
}

BinaryMask half_face_mask(int size) {
  BinaryMask m(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size / 2; ++c) m(r, c) = 1.0f;
  }
  return m;
}

BinaryMask full_mask(int size) {
  BinaryMask m(size, size);
  for (auto& v : m.values()) v = 1.0f;
  return m;
}

AblationReport assemble_report(std::vector<VariantRow> rows, const AblationSettings& settings) {
  AblationReport report;
  if (rows.empty()) throw InputError("ablation report needs at least one variant");
  const auto& seeds = rows.front().seeds;
  for (auto& row : rows) {
    if (row.seeds != seeds) throw InputError("variant " + row.tag + " was evaluated on a different seed set");
    if (row.compliance.size() != seeds.size() || row.toy_cvs.size() != seeds.size() ||
        row.deviation.size() != seeds.size()) {
      throw InputError("variant " + row.tag + " has incomplete per-seed results");
    }
    row.mean_compliance = mean(row.compliance);
    row.mean_toy_cvs = mean(row.toy_cvs);
    row.mean_deviation = mean(row.deviation);
  }
  report.seeds = seeds;
  report.labels = settings.labels;
  report.control = to_json(settings.control);
  report.samples = static_cast<int>(seeds.size());
  report.rows = std::move(rows);
  return report;
}

AblationReport run_ablation(const std::vector<std::string>& variants, const AblationSettings& settings,
                            const AblationModels& models) {
  if (settings.n_seeds < 1) throw InputError("ablation needs at least one seed");
  if (settings.labels.empty()) throw InputError("ablation needs at least one conditioning label");
  if (!models.backend || !models.sd || !models.id) throw PreconditionError("ablation needs the main checkpoints");

  std::vector<AblationVariant> plan;
  std::vector<std::string> missing;
  for (const auto& v : variants) {
    plan.push_back(ablation_variant(v));
    const auto src = plan.back().sd_source;
    if (src != FeatureSource::internal && !models.variant_sd.count(src)) {
      missing.push_back(plan.back().tag + " needs a shadow/depth estimator trained with --source " + to_string(src));
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing variant checkpoints:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw PreconditionError(msg);
  }
  const auto& backend = *models.backend;
  validate(settings.control, backend.image_size());
  const auto& mask = settings.control.mode == ControlMode::mask ? settings.control.mask : std::nullopt;

  std::vector<std::uint64_t> seeds;
  std::vector<int> labels;
  std::vector<RgbImage> baseline;
  Sampler plain(models.backend, settings.sampler);
  for (int i = 0; i < settings.n_seeds; ++i) {
    seeds.push_back(settings.seed_base + static_cast<std::uint64_t>(i));
    labels.push_back(settings.labels[static_cast<std::size_t>(i) % settings.labels.size()]);
    baseline.push_back(plain.generate(labels.back(), seeds.back()).image);
  }

  std::vector<VariantRow> rows;
  for (const auto& v : plan) {
    auto sd = v.sd_source == FeatureSource::internal ? models.sd : models.variant_sd.at(v.sd_source);
    ShadowGuide guide(models.backend, sd, models.id, settings.sampler);
    GuidanceConfig cfg = v.guidance;
    cfg.lambda_shadow = settings.base.lambda_shadow;
    cfg.lambda_identity = settings.base.lambda_identity;
    cfg.max_iterations = settings.base.max_iterations;
    cfg.learning_rate = settings.base.learning_rate;
    cfg.divergence_factor = settings.base.divergence_factor;
    if (v.tag[0] != 'b' && v.tag[0] != 'c') cfg.intervention_step = settings.base.intervention_step;

    VariantRow row;
    row.tag = v.tag;
    row.description = v.description;
    row.seeds = seeds;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      auto res = guide.generate_with_control(labels[i], seeds[i], settings.control, cfg);
      auto sd_main = models.sd;
      auto id_main = models.id;
      row.compliance.push_back(shadow_compliance(res, sd_main, backend));
      row.toy_cvs.push_back(toy_cvs(res.image, baseline[i], id_main, backend));
      double dev = 0.0;
      int count = 0;
      for (int r = 0; r < res.image.height(); ++r) {
        for (int c = 0; c < res.image.width(); ++c) {
          if (mask && (*mask)(r, c) > 0.5f) continue;
          for (int ch = 0; ch < 3; ++ch) dev += std::abs(res.image.at(r, c, ch) - baseline[i].at(r, c, ch));
          count += 3;
        }
      }
      row.deviation.push_back(count ? dev / count : 0.0);
    }
    log::info("ablation {}: compliance {:.4f} toy_cvs {:.4f}", v.tag, mean(row.compliance), mean(row.toy_cvs));
    rows.push_back(std::move(row));
  }
  AblationSettings recorded = settings;
  recorded.labels = labels;
  return assemble_report(std::move(rows), recorded);
}

json to_json(const AblationReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"tag", r.tag},
                    {"description", r.description},
                    {"seeds", r.seeds},
                    {"shadow_compliance", r.compliance},
                    {"toy_cvs", r.toy_cvs},
                    {"uncontrolled_deviation", r.deviation},
                    {"mean_shadow_compliance", r.mean_compliance},
                    {"mean_toy_cvs", r.mean_toy_cvs},
                    {"mean_uncontrolled_deviation", r.mean_deviation}});
  }
  return {{"schema", "shadowsteer/ablation-report"},
          {"version", AblationReport::kVersion},
          {"samples", report.samples},
          {"seeds", report.seeds},
          {"labels", report.labels},
          {"control", report.control},
          {"metrics",
           {{"shadow_compliance", "L1 between the final image's estimated shadow and the target (lower is better)"},
            {"toy_cvs", "cosine of identity embeddings, controlled vs uncontrolled image (higher is better)"},
            {"uncontrolled_deviation",
             "mean |controlled - uncontrolled| outside the mask; stands in for perceptual quality scores"}}},
          {"variants", rows}};
}

std::string to_markdown(const AblationReport& report) {
  std::string out = "| Variant | Shadow compliance (lower) | Toy CVS (higher) | Uncontrolled deviation (lower) |\n";
  out += "|---|---|---|---|\n";
  for (const auto& r : report.rows) {
    out += fmt::format("| {} | {:.4f} | {:.4f} | {:.4f} |\n", r.tag, r.mean_compliance, r.mean_toy_cvs,
                       r.mean_deviation);
  }
  out += fmt::format("\n{} seeds per variant.\n", report.samples);
  return out;
}

void validate_report_json(const json& j) {
  auto need = [&](const json& obj, const char* key, json::value_t type) {
    if (!obj.contains(key)) throw InputError(std::string("report lacks '") + key + "'");
    const auto& v = obj.at(key);
    bool ok = v.type() == type;
    if (type == json::value_t::number_float) ok = v.is_number();
    if (type == json::value_t::number_unsigned) ok = v.is_number_integer();
    if (!ok) throw InputError(std::string("report field '") + key + "' has the wrong type");
  };
  need(j, "schema", json::value_t::string);
  if (j["schema"] != "shadowsteer/ablation-report") throw InputError("not an ablation report");
  need(j, "version", json::value_t::number_unsigned);
  need(j, "seeds", json::value_t::array);
  need(j, "variants", json::value_t::array);
  const auto n = j["seeds"].size();
  for (const auto& v : j["variants"]) {
    need(v, "tag", json::value_t::string);
    need(v, "mean_shadow_compliance", json::value_t::number_float);
    need(v, "mean_toy_cvs", json::value_t::number_float);
    need(v, "mean_uncontrolled_deviation", json::value_t::number_float);
    for (const char* k : {"shadow_compliance", "toy_cvs", "uncontrolled_deviation", "seeds"}) {
      need(v, k, json::value_t::array);
      if (v[k].size() != n) throw InputError(std::string("variant field '") + k + "' has the wrong length");
    }
  }
}

}  // namespace shadowsteer
