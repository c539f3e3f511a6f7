#include "torch_doctest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "shadowsteer/checkpoint.hpp"
#include "shadowsteer/diffusion.hpp"
#include "shadowsteer/errors.hpp"
#include "shadowsteer/image_io.hpp"
#include "shadowsteer/scene.hpp"
#include "shadowsteer/schedule.hpp"
#include "shadowsteer/tensor_util.hpp"
#include "test_paths.hpp"
#include "tiny_model.hpp"

using namespace shadowsteer;
namespace fs = std::filesystem;

namespace {

bool identical(const torch::Tensor& a, const torch::Tensor& b) { return a.sizes() == b.sizes() && torch::equal(a, b); }

bool identical(const RgbImage& a, const RgbImage& b) {
  return a.height() == b.height() && a.width() == b.width() &&
         std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

}  // namespace

TEST_CASE("schedule invariants hold across configurations") {
  for (auto [train, infer, offset] : {std::tuple{1000, 100, 0.008}, std::tuple{1000, 50, 0.008},
                                      std::tuple{200, 20, 0.02}, std::tuple{100, 100, 0.008}}) {
    NoiseSchedule s(train, infer, offset);
    for (double b : s.betas()) CHECK((b > 0.0 && b < 1.0));
    CHECK(std::abs(1.0 - s.alpha_bar_at(0)) <= 1e-3);
    for (int t = 1; t < train; ++t) REQUIRE(s.alpha_bar()[t] < s.alpha_bar()[t - 1]);
    for (int k = 1; k < infer; ++k) CHECK(s.timestep(k) < s.timestep(k - 1));
    CHECK(s.timestep(infer - 1) == 0);
  }
  NoiseSchedule s;
  CHECK(s.timestep(0) == 990);
  CHECK(s.timestep(40) == 590);
  CHECK(s.alpha_bar_next(99) == 1.0);
  CHECK_THROWS_AS(s.timestep(100), InputError);
  CHECK_THROWS_AS(s.alpha_bar_at(1000), InputError);
  CHECK_THROWS_AS(NoiseSchedule(1000, 0), InputError);
  CHECK_THROWS_AS(NoiseSchedule(50, 50, 0.008), InputError);
}

TEST_CASE("add_noise endpoints and linearity") {
  NoiseSchedule s;
  auto gen = make_generator(11);
  auto x0 = torch::randn({4, 3, 16, 16}, gen, torch::kFloat64);
  auto n = torch::randn({4, 3, 16, 16}, gen, torch::kFloat64);

  CHECK((add_noise(s, x0, 0, n) - x0).pow(2).mean().item<double>() <= 1e-3);

  auto xT = add_noise(s, x0, 999, n).flatten();
  auto nf = n.flatten();
  auto corr = ((xT - xT.mean()) * (nf - nf.mean())).mean() / (xT.std(false) * nf.std(false));
  CHECK(corr.item<double>() > 0.99);

  for (int t : {0, 17, 500, 999}) {
    const double a = 0.37;
    auto lhs = add_noise(s, a * x0, t, n) - a * add_noise(s, x0, t, n);
    auto rhs = (1.0 - a) * std::sqrt(1.0 - s.alpha_bar_at(t)) * n;
    CHECK((lhs - rhs).abs().max().item<double>() < 1e-12);
  }
  CHECK_THROWS_AS(add_noise(s, x0, 1000, n), InputError);
  CHECK_THROWS_AS(add_noise(s, x0, -1, n), InputError);
  CHECK_THROWS_AS(add_noise(s, x0, 3, n.slice(0, 0, 1)), InputError);

  auto tb = torch::tensor({0, 10, 500, 999}, torch::kInt64);
  auto batched = add_noise(s, x0, tb, n);
  for (int i = 0; i < 4; ++i) {
    auto single = add_noise(s, x0[i], tb[i].item<int>(), n[i]);
    CHECK((batched[i] - single).abs().max().item<double>() < 1e-12);
  }
}

TEST_CASE("predict_x0 inverts add_noise at every timestep") {
  for (auto [train, infer] : {std::pair{1000, 100}, std::pair{300, 30}}) {
    NoiseSchedule s(train, infer);
    auto gen = make_generator(5);
    auto x0 = torch::rand({1, 3, 8, 8}, gen, torch::kFloat64) * 2 - 1;
    auto n = torch::randn({1, 3, 8, 8}, gen, torch::kFloat64);
    double worst = 0.0;
    for (int t = 0; t < train; ++t) {
      auto back = predict_x0(s, add_noise(s, x0, t, n), t, n);
      worst = std::max(worst, (back - x0).abs().max().item<double>());
    }
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("unclipped DDIM with the true noise lands on the closed-form next latent") {
  NoiseSchedule s;
  auto gen = make_generator(9);
  auto x0 = torch::rand({1, 3, 8, 8}, gen, torch::kFloat64) * 2 - 1;
  auto n = torch::randn({1, 3, 8, 8}, gen, torch::kFloat64);
  for (int k : {0, 40, 98, 99}) {
    auto xt = add_noise(s, x0, s.timestep(k), n);
    auto up = ddim_update(s, xt, n, k, false);
    auto expected = k == 99 ? x0 : add_noise(s, x0, s.timestep(k + 1), n);
    CHECK((up.x_next - expected).abs().max().item<double>() < 1e-9);
    CHECK((up.predicted_x0 - x0).abs().max().item<double>() < 1e-9);
  }
  // Clipping only bites when the x0 estimate leaves [-1, 1]; the update then
  // re-noises the clamped estimate along the implied noise direction.
  auto xt = add_noise(s, x0 * 3, 590, n);
  auto wild = ddim_update(s, xt, n, 40, true);
  CHECK(wild.predicted_x0.abs().max().item<double>() > 1.0);
  const double ab = s.alpha_bar_at(590), ab_next = s.alpha_bar_at(s.timestep(41));
  auto x0c = (3 * x0).clamp(-1, 1);
  auto implied = (xt - std::sqrt(ab) * x0c) / std::sqrt(1 - ab);
  auto expected = std::sqrt(ab_next) * x0c + std::sqrt(1 - ab_next) * implied;
  CHECK((wild.x_next - expected).abs().max().item<double>() < 1e-9);
}

TEST_CASE("UNet output and tap shapes follow the configuration") {
  auto m = tiny::model(16, 8);
  auto x = torch::randn({2, 3, 16, 16});
  auto t = torch::tensor({5, 900}, torch::kInt64);
  auto labels = torch::tensor({0, m->null_label()}, torch::kInt64);
  auto out = m->predict(x, t, labels, true);
  CHECK(out.eps.sizes() == x.sizes());
  REQUIRE(out.taps.size() == 5);
  auto ch = m->tap_channels();
  auto st = m->tap_strides();
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(out.taps[i].size(1) == ch[i]);
    CHECK(out.taps[i].size(2) == 16 / st[i]);
    CHECK(out.taps[i].size(3) == 16 / st[i]);
  }
  CHECK(m->predict(x, t, labels, false).taps.empty());
  CHECK_THROWS_AS(m->predict(x, t, torch::tensor({0, m->null_label() + 1}, torch::kInt64), false), InputError);
  CHECK_THROWS_AS(m->predict(torch::randn({2, 3, 10, 10}), t, labels, false), InputError);
}

TEST_CASE("classifier-free guidance contract") {
  auto m = tiny::model();
  Sampler unit(m, SamplerConfig{.cfg_scale = 1.0});
  auto state = unit.initial_state(2, 4);
  state.step_index = 40;

  auto cond = m->predict(state.x, torch::full({1}, unit.schedule().timestep(40), torch::kInt64),
                         torch::full({1}, 2, torch::kInt64), false);
  auto plain = unit.unet_forward(state, false);
  CHECK(identical(plain.eps, cond.eps));
  CHECK_FALSE(plain.pyramid.has_value());
  // Same identity when the batched [cond, uncond] route is taken for the taps.
  auto tapped = unit.unet_forward(state, true);
  CHECK((tapped.eps - cond.eps).abs().max().item<float>() < 1e-5f);
  REQUIRE(tapped.pyramid.has_value());
  CHECK(tapped.pyramid->taps.size() == 5);
  CHECK(tapped.pyramid->step_index == 40);

  Sampler guided(m, SamplerConfig{.cfg_scale = 6.0});
  auto g = guided.unet_forward(state, true);
  auto uncond = guided.unconditional_forward(state.x, 40, true);
  CHECK((g.eps_uncond - uncond.eps).abs().max().item<float>() < 1e-5f);
  auto expected = uncond.eps + 6.0 * (cond.eps - uncond.eps);
  CHECK((g.eps - expected).abs().max().item<float>() < 1e-4f);
  // Taps come from the unconditional half.
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK((g.pyramid->taps[i] - uncond.pyramid->taps[i]).abs().max().item<float>() < 1e-5f);
  }
  CHECK(identical(guided.unet_forward(state, false).eps, guided.unet_forward(state, false).eps));
}

TEST_CASE("sampler validation") {
  auto m = tiny::model();
  CHECK_THROWS_AS(Sampler(m, SamplerConfig{.cfg_scale = 0.5}), InputError);
  CHECK_THROWS_AS(Sampler(m, SamplerConfig{.eta = 1.5}), InputError);
  CHECK_THROWS_AS(Sampler(m, SamplerConfig{.eta = 0.5}), InputError);
  Sampler s(m, SamplerConfig{.inference_steps = 10});
  auto state = s.initial_state(0, 1);
  state.step_index = 10;
  CHECK_THROWS_AS(s.denoise_step(state, state.x), InputError);
  CHECK_THROWS_AS(s.initial_state(m->null_label() + 1, 1), InputError);
  state.step_index = 0;
  state.x = torch::zeros({1, 3, 4, 4});
  CHECK_THROWS_AS(s.unet_forward(state, false), InputError);
}

TEST_CASE("generation is deterministic and no-op hooks change nothing") {
  auto m = tiny::model();
  Sampler s(m, SamplerConfig{});
  auto a = s.generate(1, 77);
  auto b = s.generate(1, 77);
  CHECK(a.steps_run == 100);
  CHECK(identical(a.image, b.image));
  CHECK(*std::min_element(a.image.values().begin(), a.image.values().end()) >= 0.0f);
  CHECK(*std::max_element(a.image.values().begin(), a.image.values().end()) <= 1.0f);
  CHECK_FALSE(identical(a.image, s.generate(1, 78).image));

  int calls = 0;
  auto same = s.generate(1, 77, [&](const LatentState& st) {
    CHECK(st.step_index == calls);
    ++calls;
    return st.x;
  });
  CHECK(calls == 100);
  CHECK(identical(a.image, same.image));

  auto at40 = s.generate(1, 77, [](const LatentState& st) { return st.step_index == 40 ? st.x + 0.0 : st.x; });
  CHECK(identical(a.image, at40.image));

  CHECK_THROWS_AS(s.generate(1, 77, [](const LatentState& st) { return st.x.slice(3, 0, 4); }), InputError);
}

TEST_CASE("manual stepping matches generate and ends at the last index") {
  auto m = tiny::model();
  Sampler s(m, SamplerConfig{.inference_steps = 20});
  auto state = s.initial_state(3, 5);
  torch::NoGradGuard no_grad;
  torch::Tensor last;
  while (state.step_index < 20) {
    auto step = s.denoise_step(state, s.unet_forward(state, false).eps);
    last = step.next.x;
    state = step.next;
    if (state.step_index == 20) break;
  }
  CHECK(state.step_index == 20);
  CHECK(identical(image_from_tensor(model_to_image(last)), s.generate(3, 5).image));
}

TEST_CASE("noise prediction gradients match central differences") {
  auto m = tiny::model(8, 8, 21);
  m->unet()->to(torch::kFloat64);
  auto gen = make_generator(2);
  auto x = torch::randn({1, 3, 8, 8}, gen, torch::kFloat64).requires_grad_(true);
  auto w = torch::randn({1, 3, 8, 8}, gen, torch::kFloat64);
  auto t = torch::full({1}, 590, torch::kInt64);
  auto labels = torch::full({1}, m->null_label(), torch::kInt64);
  auto f = [&](const torch::Tensor& in) { return (m->predict(in, t, labels, false).eps * w).sum(); };

  f(x).backward();
  auto grad = x.grad().clone();
  const double h = 1e-6;
  double worst = 0.0;
  torch::NoGradGuard no_grad;
  auto flat = x.detach().clone().flatten();
  for (int64_t i = 0; i < flat.numel(); i += 7) {
    auto plus = flat.clone();
    auto minus = flat.clone();
    plus[i] += h;
    minus[i] -= h;
    const double fd =
        (f(plus.view({1, 3, 8, 8})).item<double>() - f(minus.view({1, 3, 8, 8})).item<double>()) / (2 * h);
    const double an = grad.flatten()[i].item<double>();
    worst = std::max(worst, std::abs(fd - an) / std::max(1e-3, std::abs(fd)));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("checkpoints round-trip and refuse mismatches") {
  const auto dir = test_paths::scratch("diffusion_ckpt");
  auto m = tiny::model();
  const auto path = dir / "model.pt";
  nlohmann::json header{{"model", m->describe()}, {"weights_hash", m->weights_hash()}};
  checkpoint::save(path, DiffusionModel::kCheckpointKind, header, *m->unet());

  auto loaded = DiffusionModel::load(path);
  CHECK(loaded->weights_hash() == m->weights_hash());
  CHECK(loaded->frozen());
  for (const auto& p : loaded->unet()->parameters()) CHECK_FALSE(p.requires_grad());
  CHECK(identical(Sampler(loaded).generate(0, 3).image, Sampler(m).generate(0, 3).image));

  CHECK_THROWS_AS(checkpoint::read_header(path, "sd_estimator"), CheckpointError);
  CHECK_THROWS_AS(DiffusionModel::load(dir / "missing.pt"), CheckpointError);
  io::write_text(dir / "junk.pt", "not a checkpoint");
  CHECK_THROWS_AS(DiffusionModel::load(dir / "junk.pt"), CheckpointError);

  header["weights_hash"] = "0000000000000000";
  checkpoint::save(dir / "tampered.pt", DiffusionModel::kCheckpointKind, header, *m->unet());
  CHECK_THROWS_AS(DiffusionModel::load(dir / "tampered.pt"), CheckpointError);

  // Hand-craft a header from a future format.
  torch::serialize::OutputArchive archive;
  nlohmann::json future = header;
  future["kind"] = DiffusionModel::kCheckpointKind;
  future["format_version"] = checkpoint::kFormatVersion + 1;
  archive.write("header", c10::IValue(future.dump()));
  archive.save_to((dir / "future.pt").string());
  CHECK_THROWS_AS(DiffusionModel::load(dir / "future.pt"), CheckpointError);
}

TEST_CASE("training overfits a single sample") {
  const auto dir = test_paths::scratch("overfit");
  auto manifest = scene::build_dataset(1, 1, 32, dir / "data", 1);
  DiffusionTrainConfig cfg;
  cfg.steps = 200;
  cfg.batch_size = 8;
  cfg.learning_rate = 2e-3;
  cfg.log_every = 0;
  cfg.checkpoint_every = 0;
  auto report = train_diffusion(manifest, cfg, dir / "model.pt");
  CHECK(report.steps == 200);
  MESSAGE("overfit loss " << report.initial_loss << " -> " << report.final_loss);
  const double tail = std::accumulate(report.losses.end() - 20, report.losses.end(), 0.0) / 20.0;
  CHECK(tail < 0.1 * report.initial_loss);
  CHECK(fs::exists(dir / "model.pt"));
}

TEST_CASE("resumed training reproduces uninterrupted losses") {
  const auto dir = test_paths::scratch("resume");
  auto manifest = scene::build_dataset(3, 2, 32, dir / "data", 4);
  DiffusionTrainConfig cfg;
  cfg.steps = 6;
  cfg.batch_size = 4;
  cfg.base_channels = 8;
  cfg.log_every = 0;
  cfg.checkpoint_every = 0;
  auto full = train_diffusion(manifest, cfg, dir / "full.pt");

  auto half_cfg = cfg;
  half_cfg.steps = 3;
  train_diffusion(manifest, half_cfg, dir / "half.pt");
  auto resumed = train_diffusion(manifest, cfg, dir / "resumed.pt", dir / "half.pt");
  REQUIRE(resumed.losses.size() == full.losses.size());
  for (std::size_t i = 0; i < full.losses.size(); ++i) CHECK(std::abs(resumed.losses[i] - full.losses[i]) <= 1e-4);
  CHECK(DiffusionModel::load(dir / "resumed.pt")->weights_hash() ==
        DiffusionModel::load(dir / "full.pt")->weights_hash());

  auto other = cfg;
  other.learning_rate = 5e-4;
  CHECK_THROWS_AS(train_diffusion(manifest, other, dir / "x.pt", dir / "half.pt"), CheckpointError);
}

TEST_CASE("with every label dropped, conditional and unconditional predictions coincide") {
  const auto dir = test_paths::scratch("dropout");
  auto manifest = scene::build_dataset(3, 2, 32, dir / "data", 2);
  DiffusionTrainConfig cfg;
  cfg.steps = 10;
  cfg.batch_size = 4;
  cfg.base_channels = 8;
  cfg.label_dropout = 1.0;
  cfg.log_every = 0;
  cfg.checkpoint_every = 0;
  train_diffusion(manifest, cfg, dir / "model.pt");
  auto m = DiffusionModel::load(dir / "model.pt");
  auto x = torch::randn({1, 3, 32, 32});
  auto t = torch::full({1}, 300, torch::kInt64);
  auto uncond = m->predict(x, t, torch::full({1}, m->null_label(), torch::kInt64), false).eps;
  for (int label = 0; label < 3; ++label) {
    CHECK(identical(m->predict(x, t, torch::full({1}, label, torch::kInt64), false).eps, uncond));
  }
}

TEST_CASE("training rejects labels outside the manifest's identity range") {
  const auto dir = test_paths::scratch("bad_labels");
  auto manifest = scene::build_dataset(2, 1, 32, dir / "data", 2);
  manifest.identities = 1;
  DiffusionTrainConfig cfg;
  cfg.steps = 1;
  CHECK_THROWS_AS(train_diffusion(manifest, cfg, dir / "model.pt"), InputError);
}
