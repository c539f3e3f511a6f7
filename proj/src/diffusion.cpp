#include "shadowsteer/diffusion.hpp"

#include "shadowsteer/log.hpp"

#include <chrono>
#include <numeric>

#include "shadowsteer/checkpoint.hpp"
#include "shadowsteer/dataset.hpp"
#include "shadowsteer/errors.hpp"
#include "shadowsteer/tensor_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace shadowsteer {

DiffusionModel::DiffusionModel(const UNetConfig& unet, int image_size, int train_steps, double cosine_offset)
    : unet_(unet), image_size_(image_size), train_steps_(train_steps), cosine_offset_(cosine_offset) {
  if (image_size < 4 || image_size % 4 != 0) throw InputError("image size must be a positive multiple of 4");
  NoiseSchedule check(train_steps, 1, cosine_offset);
}

json DiffusionModel::describe() const {
  return {{"unet", to_json(unet_->config())},
          {"image_size", image_size_},
          {"schedule", {{"train_steps", train_steps_}, {"cosine_offset", cosine_offset_}}}};
}

std::shared_ptr<DiffusionModel> DiffusionModel::load(const fs::path& path) {
  const json header = checkpoint::read_header(path, kCheckpointKind);
  std::shared_ptr<DiffusionModel> model;
  try {
    const auto& m = header.at("model");
    model = std::make_shared<DiffusionModel>(unet_config_from_json(m.at("unet")), m.at("image_size").get<int>(),
                                             m.at("schedule").at("train_steps").get<int>(),
                                             m.at("schedule").at("cosine_offset").get<double>());
  } catch (const json::exception& e) {
    throw CheckpointError("malformed diffusion checkpoint header in " + path.string() + ": " + e.what());
  }
  checkpoint::load_weights(path, *model->unet_);
  model->freeze();
  if (header.contains("weights_hash") && header["weights_hash"].get<std::string>() != model->frozen_hash_) {
    throw CheckpointError("weights in " + path.string() + " do not match their recorded hash");
  }
  return model;
}

void DiffusionModel::freeze() {
  shadowsteer::freeze(*unet_);
  frozen_ = true;
  frozen_hash_ = parameter_hash(*unet_);
}

std::string DiffusionModel::weights_hash() const { return frozen_ ? frozen_hash_ : parameter_hash(*unet_); }

UNetOutput DiffusionModel::predict(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& labels,
                                   bool tap) const {
  // Forward passes do not mutate the module; the holder just lacks a const overload.
  return const_cast<UNetImpl&>(*unet_).forward(x, t, labels, tap);
}

void validate(const SamplerConfig& cfg) {
  if (!(cfg.cfg_scale >= 1.0)) throw InputError("cfg_scale must be >= 1");
  if (cfg.inference_steps < 1) throw InputError("inference_steps must be >= 1");
  if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0)) throw InputError("eta must lie in [0, 1]");
  if (cfg.eta != 0.0) throw InputError("stochastic sampling (eta > 0) is not supported");
}

json to_json(const SamplerConfig& cfg) {
  return {{"cfg_scale", cfg.cfg_scale},
          {"inference_steps", cfg.inference_steps},
          {"eta", cfg.eta},
          {"clip_x0", cfg.clip_x0}};
}

SamplerConfig sampler_config_from_json(const json& j) {
  SamplerConfig cfg;
  cfg.cfg_scale = j.value("cfg_scale", cfg.cfg_scale);
  cfg.inference_steps = j.value("inference_steps", cfg.inference_steps);
  cfg.eta = j.value("eta", cfg.eta);
  cfg.clip_x0 = j.value("clip_x0", cfg.clip_x0);
  return cfg;
}

Sampler::Sampler(std::shared_ptr<const DenoisingBackend> backend, SamplerConfig cfg)
    : backend_(std::move(backend)), cfg_(cfg), schedule_((validate(cfg), backend_->train_steps()),
                                                         cfg.inference_steps, backend_->cosine_offset()) {}

LatentState Sampler::initial_state(int label, std::uint64_t seed) const {
  if (label < 0 || label > backend_->null_label()) throw InputError("conditioning label out of range");
  const int s = backend_->image_size();
  LatentState state;
  auto gen = make_generator(seed);
  state.x = torch::randn({1, backend_->image_channels(), s, s}, gen, torch::kFloat32);
  state.step_index = 0;
  state.seed = seed;
  state.label = label;
  return state;
}

void Sampler::check_state(const LatentState& state) const {
  const int s = backend_->image_size();
  if (!state.x.defined() || !state.x.sizes().equals({1, backend_->image_channels(), s, s})) {
    throw InputError("latent has the wrong shape for this model");
  }
  if (state.step_index < 0 || state.step_index >= cfg_.inference_steps) {
    throw InputError("latent step index is outside the sampler's schedule");
  }
  if (state.label < 0 || state.label > backend_->null_label()) throw InputError("conditioning label out of range");
}

ForwardResult Sampler::unet_forward(const LatentState& state, bool tap) const {
  check_state(state);
  const int64_t t = schedule_.timestep(state.step_index);
  ForwardResult out;
  if (cfg_.cfg_scale == 1.0 && !tap) {
    out.eps = backend_->predict(state.x, torch::full({1}, t, torch::kInt64),
                                torch::full({1}, state.label, torch::kInt64), false)
                  .eps;
    return out;
  }
  auto x2 = torch::cat({state.x, state.x}, 0);
  auto labels = torch::tensor({static_cast<int64_t>(state.label), static_cast<int64_t>(backend_->null_label())});
  auto res = backend_->predict(x2, torch::full({2}, t, torch::kInt64), labels, tap);
  auto eps_cond = res.eps.slice(0, 0, 1);
  out.eps_uncond = res.eps.slice(0, 1, 2);
  out.eps = cfg_.cfg_scale == 1.0 ? eps_cond : out.eps_uncond + cfg_.cfg_scale * (eps_cond - out.eps_uncond);
  if (tap) {
    FeaturePyramid pyramid;
    pyramid.step_index = state.step_index;
    for (const auto& f : res.taps) pyramid.taps.push_back(f.slice(0, 1, 2));
    out.pyramid = std::move(pyramid);
  }
  return out;
}

ForwardResult Sampler::unconditional_forward(const torch::Tensor& x, int step_index, bool tap) const {
  const int64_t t = schedule_.timestep(step_index);
  const int64_t b = x.size(0);
  auto res = backend_->predict(x, torch::full({b}, t, torch::kInt64),
                               torch::full({b}, static_cast<int64_t>(backend_->null_label()), torch::kInt64), tap);
  ForwardResult out;
  out.eps = res.eps;
  out.eps_uncond = res.eps;
  if (tap) out.pyramid = FeaturePyramid{std::move(res.taps), step_index};
  return out;
}

StepResult Sampler::denoise_step(const LatentState& state, const torch::Tensor& eps) const {
  check_state(state);
  auto update = ddim_update(schedule_, state.x, eps, state.step_index, cfg_.clip_x0);
  StepResult out;
  out.next = state;
  out.next.x = update.x_next;
  out.next.step_index = state.step_index + 1;
  out.predicted_x0 = update.predicted_x0;
  return out;
}

GenerationResult Sampler::generate(int label, std::uint64_t seed, const StepHook& hook) const {
  LatentState state = initial_state(label, seed);
  GenerationResult out;
  while (state.step_index < cfg_.inference_steps) {
    if (hook) {
      torch::Tensor replaced = hook(state);
      if (!replaced.defined() || !replaced.sizes().equals(state.x.sizes())) {
        throw InputError("step hook returned a latent of the wrong shape");
      }
      state.x = replaced.detach();
    }
    torch::NoGradGuard no_grad;
    auto fwd = unet_forward(state, false);
    auto step = denoise_step(state, fwd.eps);
    // The step after the last lands on the clipped x0 estimate.
    if (step.next.step_index == cfg_.inference_steps) {
      out.final_x = step.next.x;
      state.step_index = step.next.step_index;
      break;
    }
    state = std::move(step.next);
    ++out.steps_run;
  }
  out.steps_run = state.step_index;
  out.image = image_from_tensor(model_to_image(out.final_x));
  return out;
}

json to_json(const DiffusionTrainConfig& cfg) {
  return {{"steps", cfg.steps},
          {"batch_size", cfg.batch_size},
          {"learning_rate", cfg.learning_rate},
          {"label_dropout", cfg.label_dropout},
          {"grad_clip", cfg.grad_clip},
          {"base_channels", cfg.base_channels},
          {"train_steps", cfg.train_steps},
          {"seed", cfg.seed},
          {"log_every", cfg.log_every},
          {"checkpoint_every", cfg.checkpoint_every}};
}

DiffusionTrainConfig diffusion_train_config_from_json(const json& j) {
  DiffusionTrainConfig cfg;
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.label_dropout = j.value("label_dropout", cfg.label_dropout);
  cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
  cfg.base_channels = j.value("base_channels", cfg.base_channels);
  cfg.train_steps = j.value("train_steps", cfg.train_steps);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.log_every = j.value("log_every", cfg.log_every);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  return cfg;
}

namespace {

void validate(const DiffusionTrainConfig& cfg) {
  if (cfg.steps < 1) throw InputError("steps must be >= 1");
  if (cfg.batch_size < 1) throw InputError("batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw InputError("learning_rate must be > 0");
  if (!(cfg.label_dropout >= 0.0 && cfg.label_dropout <= 1.0)) throw InputError("label_dropout must lie in [0, 1]");
  if (cfg.base_channels < 1) throw InputError("base_channels must be >= 1");
}

// Everything except the step budget and logging cadence must match to resume.
json resume_signature(const DiffusionTrainConfig& cfg) {
  json j = to_json(cfg);
  j.erase("steps");
  j.erase("log_every");
  j.erase("checkpoint_every");
  return j;
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  if (to <= from) return 0.0;
  return std::accumulate(v.begin() + from, v.begin() + to, 0.0) / static_cast<double>(to - from);
}

}  // namespace

DiffusionTrainReport train_diffusion(const scene::DatasetManifest& manifest, const DiffusionTrainConfig& cfg,
                                     const fs::path& out_checkpoint, const std::optional<fs::path>& resume) {
  validate(cfg);
  const TensorDataset data = load_tensor_dataset(manifest);
  if (data.train.numel() == 0) throw InputError("dataset has an empty train split");

  UNetConfig ucfg;
  ucfg.base_channels = cfg.base_channels;
  ucfg.num_labels = manifest.identities;

  torch::manual_seed(cfg.seed);
  DiffusionModel model(ucfg, manifest.image_size, cfg.train_steps);
  const NoiseSchedule schedule(cfg.train_steps, 1, model.cosine_offset());
  torch::optim::Adam optimizer(model.unet()->parameters(), torch::optim::AdamOptions(cfg.learning_rate));

  DiffusionTrainReport report;
  int start = 0;
  if (resume) {
    const json header = checkpoint::read_header(*resume, DiffusionModel::kCheckpointKind);
    if (header.at("model") != model.describe()) throw CheckpointError("resume checkpoint has a different model");
    if (header.at("train_signature") != resume_signature(cfg)) {
      throw CheckpointError("resume checkpoint was trained with different settings");
    }
    checkpoint::load_weights(*resume, *model.unet(), &optimizer);
    start = header.at("step").get<int>();
    report.losses = header.at("losses").get<std::vector<double>>();
    if (static_cast<int>(report.losses.size()) != start) throw CheckpointError("resume checkpoint history is corrupt");
  }

  auto save = [&](int step) {
    json header;
    header["model"] = model.describe();
    header["train"] = to_json(cfg);
    header["train_signature"] = resume_signature(cfg);
    header["step"] = step;
    header["losses"] = report.losses;
    header["weights_hash"] = parameter_hash(*model.unet());
    header["dataset"] = {{"identities", manifest.identities}, {"samples", manifest.samples.size()},
                         {"seed", manifest.seed}};
    checkpoint::save(out_checkpoint, DiffusionModel::kCheckpointKind, header, *model.unet(), &optimizer);
  };

  model.unet()->train();
  const auto images = image_to_model(data.images);
  const auto n_train = data.train.size(0);
  const auto t0 = std::chrono::steady_clock::now();
  for (int step = start; step < cfg.steps; ++step) {
    auto gen = make_generator(scene::mix_seed(cfg.seed, static_cast<std::uint64_t>(step)));
    auto pick = torch::randint(n_train, {cfg.batch_size}, gen, torch::kInt64);
    auto rows = data.train.index_select(0, pick);
    auto x0 = images.index_select(0, rows);
    auto t = torch::randint(cfg.train_steps, {cfg.batch_size}, gen, torch::kInt64);
    auto noise = torch::randn(x0.sizes(), gen, torch::kFloat32);
    auto drop = torch::rand({cfg.batch_size}, gen, torch::kFloat32).lt(cfg.label_dropout);
    auto labels = torch::where(drop, torch::full_like(rows, model.null_label()), data.labels.index_select(0, rows));

    auto x_t = add_noise(schedule, x0, t, noise);
    auto pred = model.unet()->forward(x_t, t, labels, false).eps;
    auto loss = torch::mse_loss(pred, noise);
    optimizer.zero_grad();
    loss.backward();
    if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model.unet()->parameters(), cfg.grad_clip);
    optimizer.step();
    report.losses.push_back(loss.item<double>());

    const int done = step + 1;
    if (cfg.log_every > 0 && done % cfg.log_every == 0) {
      const auto from = report.losses.size() - std::min<std::size_t>(report.losses.size(), cfg.log_every);
      log::info("diffusion step {}/{} loss {:.4f}", done, cfg.steps,
                   mean_of(report.losses, from, report.losses.size()));
    }
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps) save(done);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save(cfg.steps);

  const auto n = report.losses.size();
  report.steps = static_cast<int>(n);
  report.initial_loss = mean_of(report.losses, 0, std::min<std::size_t>(n, 10));
  report.final_loss = mean_of(report.losses, n - std::min<std::size_t>(n, 100), n);
  return report;
}

}  // namespace shadowsteer
