// End-to-end acceptance checks over the default trained stack. Prints one
// PASS/FAIL line per criterion and exits non-zero if any fails.
//
//   acceptance STACK_DIR
//
// STACK_DIR holds data/, diffusion.pt, sd.pt, id.pt, sd_unet_output.pt and
// sd_predicted_x0.pt together with the *.report.json files written by the CLI.

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "raymarch_oracle.hpp"
#include "shadowsteer/dataset.hpp"
#include "shadowsteer/diffusion.hpp"
#include "shadowsteer/errors.hpp"
#include "shadowsteer/estimators.hpp"
#include "shadowsteer/evaluation.hpp"
#include "shadowsteer/geometry.hpp"
#include "shadowsteer/guidance.hpp"
#include "shadowsteer/image_io.hpp"
#include "shadowsteer/log.hpp"
#include "shadowsteer/scene.hpp"
#include "shadowsteer/schedule.hpp"
#include "shadowsteer/service.hpp"
#include "shadowsteer/tensor_util.hpp"
#include "terrain.hpp"

using namespace shadowsteer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 20;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Stack {
  fs::path dir;
  std::shared_ptr<DiffusionModel> model;
  SDEstimator sd{nullptr};
  IDEstimator id{nullptr};
  scene::DatasetManifest manifest;
  std::vector<int> labels;
};

std::string num(double v, int digits = 4) {
  std::ostringstream o;
  o.precision(digits);
  o << v;
  return o.str();
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ShadowGuide guide_for(const Stack& st, SDEstimator sd) {
  return ShadowGuide(st.model, sd, st.id);
}

double masked_luminance(const RgbImage& image, const BinaryMask& mask) {
  const Grid lum = image.luminance();
  double sum = 0.0;
  double n = 0.0;
  for (std::size_t i = 0; i < lum.size(); ++i) {
    sum += mask.values()[i] * lum.values()[i];
    n += mask.values()[i];
  }
  return sum / n;
}

/// Column of the darkness-weighted centroid, in [0, width).
double shadow_centroid_col(const ShadowMap& s) {
  double mass = 0.0;
  double moment = 0.0;
  for (int r = 0; r < s.height(); ++r) {
    for (int c = 0; c < s.width(); ++c) {
      const double d = 1.0 - s(r, c);
      mass += d;
      moment += d * (c + 0.5);
    }
  }
  return mass > 0.0 ? moment / mass : s.width() / 2.0;
}

Outcome raycast_oracle() {
  std::mt19937 rng(77);
  const RaycastConfig cfg;
  long total = 0;
  long agree = 0;
  double impl_seconds = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 8 + static_cast<int>(rng() % 57);
    const int w = 8 + static_cast<int>(rng() % 57);
    const auto depth = terrain::random_heightfield(rng, h, w);
    auto light = terrain::random_light(rng);
    light.z = std::max(light.z, static_cast<double>(depth.max()) + 0.05);
    const auto t0 = std::chrono::steady_clock::now();
    const ShadowMap s = raycast_shadow(depth, light, cfg);
    impl_seconds += elapsed(t0);
    const std::vector<float> raw(depth.values().begin(), depth.values().end());
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const auto v = oracle::march(raw, h, w, r, c, light.x, light.y, light.z, cfg.occlusion_bias, 0.01);
        ++total;
        if ((s(r, c) == 0.0f) == v.shadowed) ++agree;
      }
    }
  }
  const double rate = static_cast<double>(agree) / static_cast<double>(total);
  return {rate >= 0.995 && impl_seconds < 60.0,
          "agreement " + num(rate, 6) + " over " + std::to_string(total) + " pixels, ray caster " +
              num(impl_seconds, 3) + " s"};
}

Outcome scheduler_identities(const Stack& st) {
  NoiseSchedule s(st.model->train_steps(), 100, st.model->cosine_offset());
  bool monotone = true;
  for (std::size_t i = 1; i < s.alpha_bar().size(); ++i) monotone &= s.alpha_bar()[i] < s.alpha_bar()[i - 1];
  auto gen = make_generator(5);
  auto x0 = torch::rand({4, 3, 32, 32}, gen, torch::kFloat64) * 2 - 1;
  auto noise = torch::randn({4, 3, 32, 32}, gen, torch::kFloat64);
  double worst = 0.0;
  for (int t = 0; t < s.train_steps(); t += 7) {
    auto back = predict_x0(s, add_noise(s, x0, t, noise), t, noise);
    worst = std::max(worst, (back - x0).abs().max().item<double>());
  }
  Sampler sampler(st.model);
  const auto a = sampler.generate(st.labels[0], 11).image;
  const auto b = sampler.generate(st.labels[0], 11).image;
  const bool same = io::encode_rgb_png(a) == io::encode_rgb_png(b);
  return {monotone && worst <= 1e-5 && same, std::string("alpha_bar ") + (monotone ? "monotone" : "NOT monotone") +
                                                 ", inversion error " + num(worst, 3) + ", repeat run " +
                                                 (same ? "byte-identical" : "differs")};
}

Outcome gradient_check(const Stack& st) {
  // Double-precision copies so central differences resolve 1e-3 relative error.
  auto model = DiffusionModel::load(st.dir / "diffusion.pt");
  auto sd = load_sd_estimator(st.dir / "sd.pt", *model);
  auto id = load_id_estimator(st.dir / "id.pt", *model);
  ShadowGuide guide(model, sd, id);
  model->unet()->to(torch::kFloat64);
  sd->to(torch::kFloat64);
  id->to(torch::kFloat64);
  const int64_t n = model->image_size();
  auto gen = make_generator(21);
  auto x = torch::randn({1, 3, n, n}, gen, torch::kFloat64);
  auto target = torch::rand({1, 1, n, n}, gen, torch::kFloat64);
  torch::Tensor i_ref;
  {
    torch::NoGradGuard no_grad;
    i_ref = guide.readout(torch::randn({1, 3, n, n}, gen, torch::kFloat64), 40).embedding;
  }
  GuidanceConfig cfg;
  auto f = [&](const torch::Tensor& in) {
    auto r = guide.readout(in, 40);
    return guidance_loss(r.shadow, target, r.embedding, i_ref, cfg).total;
  };
  auto xg = x.clone().requires_grad_(true);
  f(xg).backward();
  auto grad = xg.grad();
  torch::NoGradGuard no_grad;
  const double h = 1e-6;
  double worst = 0.0;
  const int64_t r0 = n / 2 - 4;
  const int64_t c0 = n / 2 - 4;
  for (int64_t ch = 0; ch < 3; ++ch) {
    for (int64_t r = r0; r < r0 + 8; ++r) {
      for (int64_t c = c0; c < c0 + 8; ++c) {
        auto plus = x.clone();
        auto minus = x.clone();
        plus[0][ch][r][c] += h;
        minus[0][ch][r][c] -= h;
        const double fd = (f(plus).item<double>() - f(minus).item<double>()) / (2 * h);
        const double an = grad[0][ch][r][c].item<double>();
        worst = std::max(worst, std::abs(fd - an) / std::max(1e-4, std::abs(fd)));
      }
    }
  }
  return {worst < 1e-3, "worst relative error " + num(worst, 3) + " over a 3x8x8 crop"};
}

Outcome learnability(Stack& st) {
  const auto data = load_tensor_dataset(st.manifest);
  const auto sd_report = json::parse(io::read_text(st.dir / "sd.pt.report.json"));
  const auto id_report = json::parse(io::read_text(st.dir / "id.pt.report.json"));
  const auto cfg = estimator_train_config_from_json(sd_report.at("config"));
  const auto ev = evaluate_sd(st.sd, *st.model, data, data.val, cfg.val_timestep, scene::mix_seed(cfg.seed, 0x5d));
  const auto id_cfg = estimator_train_config_from_json(id_report.at("config"));
  const auto idev =
      evaluate_id(st.id, *st.model, data, data.val, id_cfg.t_min, id_cfg.t_max, scene::mix_seed(id_cfg.seed, 0x1d));
  const double hours =
      (sd_report.at("report").at("seconds").get<double>() + id_report.at("report").at("seconds").get<double>()) /
      3600.0;
  const bool sd_ok = ev.shadow_l1 <= 0.5 * ev.const_shadow_l1 && ev.depth_l1 <= 0.5 * ev.const_depth_l1;
  const bool id_ok = idev.triplet_accuracy >= 0.90;
  return {sd_ok && id_ok && hours <= 4.0,
          "shadow L1 " + num(ev.shadow_l1) + " vs baseline " + num(ev.const_shadow_l1) + ", depth L1 " +
              num(ev.depth_l1) + " vs " + num(ev.const_depth_l1) + ", ID triplet accuracy " +
              num(idev.triplet_accuracy) + " over " + std::to_string(idev.triplets) + " triplets, training " +
              num(hours, 3) + " h"};
}

Outcome control_efficacy(const Stack& st) {
  auto guide = guide_for(st, st.sd);
  const int size = st.model->image_size();
  ShadowControl control;
  control.mode = ControlMode::mask;
  control.mask = full_mask(size);
  control.darkness = 1.0;
  const GuidanceConfig cfg;
  double initial = 0.0;
  double final = 0.0;
  int monotone = 0;
  int identical = 0;
  for (int s = 0; s < kSeeds; ++s) {
    const int label = st.labels[s % st.labels.size()];
    std::vector<double> lum;
    for (double strength : {0.0, 0.25, 0.5, 1.0}) {
      control.strength = strength;
      const auto r = guide.generate_with_control(label, s, control, cfg);
      lum.push_back(masked_luminance(r.image, *control.mask));
      if (strength == 1.0) {
        initial += r.initial_shadow_l1;
        final += r.final_shadow_l1;
      }
      if (strength == 0.0) {
        const auto plain = guide.sampler().generate(label, s).image;
        if (io::encode_rgb_png(plain) == io::encode_rgb_png(r.image)) ++identical;
      }
    }
    bool ok = true;
    for (std::size_t i = 1; i < lum.size(); ++i) ok &= lum[i] <= lum[i - 1];
    if (ok) ++monotone;
  }
  const bool pass = final <= 0.7 * initial && monotone >= 0.9 * kSeeds && identical == kSeeds;
  return {pass, "mean shadow L1 " + num(initial / kSeeds) + " -> " + num(final / kSeeds) + " (ratio " +
                    num(final / initial, 3) + "), monotone luminance " + std::to_string(monotone) + "/" +
                    std::to_string(kSeeds) + ", strength 0 byte-identical " + std::to_string(identical) + "/" +
                    std::to_string(kSeeds)};
}

Outcome identity_direction(const Stack& st) {
  auto guide = guide_for(st, st.sd);
  ShadowControl control;
  control.mode = ControlMode::mask;
  control.mask = half_face_mask(st.model->image_size());
  GuidanceConfig with;
  with.lambda_identity = 3.0;
  GuidanceConfig without = with;
  without.lambda_identity = 0.0;
  double a = 0.0;
  double b = 0.0;
  for (int s = 0; s < kSeeds; ++s) {
    const int label = st.labels[s % st.labels.size()];
    a += guide.generate_with_control(label, s, control, with).final_identity_cosine;
    b += guide.generate_with_control(label, s, control, without).final_identity_cosine;
  }
  return {a > b, "mean identity cosine " + num(a / kSeeds, 5) + " with the identity term vs " + num(b / kSeeds, 5) +
                     " without"};
}

Outcome ablation_ordering(const Stack& st, const fs::path& out) {
  AblationModels models;
  models.backend = st.model;
  models.sd = st.sd;
  models.id = st.id;
  models.variant_sd.emplace(FeatureSource::unet_output, load_sd_estimator(st.dir / "sd_unet_output.pt", *st.model));
  models.variant_sd.emplace(FeatureSource::predicted_x0, load_sd_estimator(st.dir / "sd_predicted_x0.pt", *st.model));
  AblationSettings settings;
  settings.n_seeds = kSeeds;
  settings.labels = st.labels;
  settings.control.mode = ControlMode::mask;
  settings.control.mask = half_face_mask(st.model->image_size());
  const auto report = run_ablation(all_ablation_tags(), settings, models);
  io::write_text(out / "ablation_report.json", to_json(report).dump(2));
  io::write_text(out / "ablation_report.md", to_markdown(report));
  constexpr double kTie = 0.005;
  const auto& a = report.rows.front();
  bool best_compliance = true;
  bool best_cvs = true;
  std::string table;
  for (const auto& r : report.rows) {
    best_compliance &= a.mean_compliance <= r.mean_compliance + kTie;
    best_cvs &= a.mean_toy_cvs >= r.mean_toy_cvs - kTie;
    table += " " + r.tag.substr(0, 1) + "=" + num(r.mean_compliance, 3) + "/" + num(r.mean_toy_cvs, 3);
  }
  return {best_compliance && best_cvs, "compliance/toy_cvs:" + table};
}

Outcome left_right(const Stack& st) {
  auto guide = guide_for(st, st.sd);
  SDEstimator sd = st.sd;
  ShadowControl left;
  left.mode = ControlMode::directional_light;
  left.light = LightPosition{-5.0, 0.5, 2.0};
  ShadowControl right = left;
  right.light = LightPosition{6.0, 0.5, 2.0};
  const GuidanceConfig cfg;
  const double mid = st.model->image_size() / 2.0;
  int opposite = 0;
  for (int s = 0; s < kSeeds; ++s) {
    const int label = st.labels[s % st.labels.size()];
    const auto l = guide.generate_with_control(label, s, left, cfg);
    const auto r = guide.generate_with_control(label, s, right, cfg);
    const double cl = shadow_centroid_col(estimate_image_shadow(l.image, sd, *st.model));
    const double cr = shadow_centroid_col(estimate_image_shadow(r.image, sd, *st.model));
    if ((cl - mid) * (cr - mid) < 0.0) ++opposite;
  }
  return {opposite >= 0.8 * kSeeds,
          "shadow centroids on opposite sides for " + std::to_string(opposite) + "/" + std::to_string(kSeeds) +
              " seeds"};
}

Outcome service_end_to_end(const Stack& st, const fs::path& out) {
  service::Options opts;
  opts.diffusion_checkpoint = st.dir / "diffusion.pt";
  opts.sd_checkpoint = st.dir / "sd.pt";
  opts.id_checkpoint = st.dir / "id.pt";
  opts.run_store = out / "service_runs";
  fs::remove_all(opts.run_store);
  service::Service svc(opts);
  const int port = svc.listen_background();
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(600);
  auto fail = [&](const std::string& why) {
    svc.stop();
    return Outcome{false, why};
  };
  auto session = cli.Post("/sessions", json{{"label", st.labels[0]}, {"seed", 3}}.dump(), "application/json");
  if (!session || session->status != 201) return fail("session creation failed");
  const auto sid = json::parse(session->body)["id"].get<std::string>();
  ShadowControl control;
  control.mode = ControlMode::mask;
  control.mask = half_face_mask(st.model->image_size());
  auto put = cli.Put("/sessions/" + sid + "/control", to_json(control).dump(), "application/json");
  if (!put || put->status != 200) return fail("mask upload failed");
  auto job = cli.Post("/sessions/" + sid + "/jobs", "{}", "application/json");
  if (!job || job->status != 202) return fail("job submission failed");
  const auto jid = json::parse(job->body)["id"].get<std::string>();
  std::string state;
  for (int i = 0; i < 6000 && state != "done" && state != "failed"; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    auto r = cli.Get("/jobs/" + jid);
    if (!r) return fail("job polling failed");
    state = json::parse(r->body)["state"].get<std::string>();
  }
  if (state != "done") return fail("job ended " + state);
  auto png = cli.Get("/jobs/" + jid + "/artifacts/result.png");
  auto config = cli.Get("/jobs/" + jid + "/artifacts/config.json");
  if (!png || png->status != 200 || !config || config->status != 200) return fail("artifact download failed");
  svc.stop();

  const auto req = run_request_from_json(json::parse(config->body));
  ShadowGuide guide(st.model, st.sd, st.id, req.sampler);
  const auto replay = guide.generate_with_control(req.label, req.seed, req.control, req.guidance);
  const auto bytes = io::encode_rgb_png(replay.image);
  const bool same = std::string(bytes.begin(), bytes.end()) == png->body;
  return {same, "job " + jid + " done over HTTP; replayed result.png " + (same ? "byte-identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: acceptance STACK_DIR\n";
    return 2;
  }
  log::set_level("warn");
  Stack st;
  st.dir = argv[1];
  try {
    st.manifest = scene::load_manifest(st.dir / "data");
    st.model = DiffusionModel::load(st.dir / "diffusion.pt");
    st.sd = load_sd_estimator(st.dir / "sd.pt", *st.model);
    st.id = load_id_estimator(st.dir / "id.pt", *st.model);
    std::set<int> train_ids;
    for (const auto& e : st.manifest.samples) {
      if (std::find(st.manifest.val_identities.begin(), st.manifest.val_identities.end(), e.identity_id) ==
          st.manifest.val_identities.end()) {
        train_ids.insert(e.identity_id);
      }
    }
    st.labels.assign(train_ids.begin(), train_ids.end());
  } catch (const std::exception& e) {
    std::cerr << "cannot load the acceptance stack from " << st.dir << ": " << e.what() << "\n";
    return 2;
  }
  const fs::path out = st.dir / "acceptance";
  fs::create_directories(out);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"ray-cast oracle equivalence", [] { return raycast_oracle(); }},
      {"scheduler identities", [&] { return scheduler_identities(st); }},
      {"gradient correctness", [&] { return gradient_check(st); }},
      {"estimator learnability", [&] { return learnability(st); }},
      {"control efficacy", [&] { return control_efficacy(st); }},
      {"identity preservation direction", [&] { return identity_direction(st); }},
      {"ablation ordering", [&] { return ablation_ordering(st, out); }},
      {"left/right light", [&] { return left_right(st); }},
      {"service end-to-end", [&] { return service_end_to_end(st, out); }},
  };
  int failed = 0;
  json summary = json::array();
  for (const auto& [name, check] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << " [" << num(elapsed(t0), 3)
              << " s]" << std::endl;
    summary.push_back({{"criterion", name}, {"pass", o.pass}, {"detail", o.detail}});
  }
  io::write_text(out / "summary.json", summary.dump(2));
  return failed == 0 ? 0 : 1;
}
