#include "shadowsteer/estimators.hpp"

#include <chrono>
#include <map>
#include <random>

#include "shadowsteer/checkpoint.hpp"
#include "shadowsteer/errors.hpp"
#include "shadowsteer/log.hpp"
#include "shadowsteer/schedule.hpp"
#include "shadowsteer/tensor_util.hpp"

namespace fs = std::filesystem;
namespace nn = torch::nn;
using nlohmann::json;

namespace shadowsteer {

std::string to_string(FeatureSource source) {
  switch (source) {
    case FeatureSource::internal:
      return "internal";
    case FeatureSource::unet_output:
      return "unet_output";
    case FeatureSource::predicted_x0:
      return "predicted_x0";
  }
  return "internal";
}

FeatureSource feature_source_from_string(const std::string& name) {
  if (name == "internal") return FeatureSource::internal;
  if (name == "unet_output") return FeatureSource::unet_output;
  if (name == "predicted_x0") return FeatureSource::predicted_x0;
  throw InputError("unknown feature source '" + name + "'");
}

std::vector<int> source_channels(const DenoisingBackend& backend, FeatureSource source) {
  if (source == FeatureSource::internal) return backend.tap_channels();
  return {backend.image_channels()};
}

std::vector<torch::Tensor> estimator_inputs(FeatureSource source, const UNetOutput& out, const torch::Tensor& x_t,
                                            const torch::Tensor& alpha_bar) {
  switch (source) {
    case FeatureSource::internal:
      if (out.taps.empty()) throw InputError("internal features requested from a pass without taps");
      return out.taps;
    case FeatureSource::unet_output:
      return {out.eps};
    case FeatureSource::predicted_x0: {
      auto ab = alpha_bar.to(x_t.dtype()).view({-1, 1, 1, 1});
      return {(x_t - (1.0 - ab).sqrt() * out.eps) / ab.sqrt()};
    }
  }
  return {};
}

json to_json(const EstimatorArch& arch) {
  return {{"tap_channels", arch.tap_channels},
          {"width", arch.width},
          {"out_size", arch.out_size},
          {"embedding_dim", arch.embedding_dim},
          {"source", to_string(arch.source)}};
}

EstimatorArch estimator_arch_from_json(const json& j) {
  EstimatorArch arch;
  arch.tap_channels = j.at("tap_channels").get<std::vector<int>>();
  arch.width = j.at("width").get<int>();
  arch.out_size = j.at("out_size").get<int>();
  arch.embedding_dim = j.at("embedding_dim").get<int>();
  arch.source = feature_source_from_string(j.at("source").get<std::string>());
  return arch;
}

namespace {

nn::Conv2d conv3x3(int in, int out, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

int groups_for(int channels) { return channels % 8 == 0 ? 8 : 1; }

nn::Sequential map_head(int width) {
  return nn::Sequential(nn::GroupNorm(groups_for(width), width), conv3x3(width, width), nn::SiLU(),
                        conv3x3(width, width / 2), nn::GroupNorm(groups_for(width / 2), width / 2), nn::SiLU(),
                        conv3x3(width / 2, 1), nn::Sigmoid());
}

}  // namespace

FusionBackboneImpl::FusionBackboneImpl(const std::vector<int>& tap_channels, int width, int out_size)
    : channels_(tap_channels), out_size_(out_size) {
  if (tap_channels.empty() || width < 2 || out_size < 1) throw InputError("invalid estimator architecture");
  projections_ = register_module("projections", nn::ModuleList());
  for (int c : tap_channels) projections_->push_back(conv3x3(c, width));
  tap_logits_ = register_parameter("tap_logits", torch::zeros({static_cast<int64_t>(tap_channels.size())}));
}

torch::Tensor FusionBackboneImpl::forward(const std::vector<torch::Tensor>& taps) {
  if (taps.size() != channels_.size()) {
    throw InputError("estimator expects " + std::to_string(channels_.size()) + " feature maps, got " +
                     std::to_string(taps.size()));
  }
  auto w = torch::softmax(tap_logits_, 0);
  torch::Tensor fused;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i].dim() != 4 || taps[i].size(1) != channels_[i]) {
      throw InputError("feature map " + std::to_string(i) + " does not match the estimator configuration");
    }
    auto p = projections_[i]->as<nn::Conv2d>()->forward(taps[i]);
    if (p.size(2) != out_size_ || p.size(3) != out_size_) {
      p = nn::functional::interpolate(p, nn::functional::InterpolateFuncOptions()
                                             .size(std::vector<int64_t>{out_size_, out_size_})
                                             .mode(torch::kBilinear)
                                             .align_corners(false));
    }
    auto term = w[static_cast<int64_t>(i)] * p;
    fused = fused.defined() ? fused + term : term;
  }
  return fused;
}

SDEstimatorImpl::SDEstimatorImpl(const EstimatorArch& arch) : arch_(arch) {
  backbone_ = register_module("backbone", FusionBackbone(arch.tap_channels, arch.width, arch.out_size));
  shadow_head_ = register_module("shadow_head", map_head(arch.width));
  depth_head_ = register_module("depth_head", map_head(arch.width));
}

SDOutput SDEstimatorImpl::forward(const std::vector<torch::Tensor>& taps) {
  auto f = backbone_(taps);
  return {shadow_head_->forward(f), depth_head_->forward(f)};
}

IDEstimatorImpl::IDEstimatorImpl(const EstimatorArch& arch) : arch_(arch) {
  if (arch.embedding_dim < 1) throw InputError("embedding_dim must be >= 1");
  const int w = arch.width;
  backbone_ = register_module("backbone", FusionBackbone(arch.tap_channels, w, arch.out_size));
  head_ = register_module("head", nn::Sequential(nn::GroupNorm(groups_for(w), w), conv3x3(w, w, 2), nn::SiLU(),
                                                 conv3x3(w, 2 * w, 2), nn::GroupNorm(groups_for(2 * w), 2 * w),
                                                 nn::SiLU()));
  project_ = register_module("project", nn::Linear(2 * w, arch.embedding_dim));
}

torch::Tensor IDEstimatorImpl::forward(const std::vector<torch::Tensor>& taps) {
  auto h = head_->forward(backbone_(taps)).mean({2, 3});
  auto v = project_(h);
  auto norm = v.norm(2, 1, true);
  // A vanishing vector maps to a fixed unit axis so the output is always unit length.
  auto axis = torch::zeros_like(v);
  axis.select(1, 0).fill_(1.0);
  return torch::where(norm > 1e-12, v / norm.clamp_min(1e-12), axis);
}

std::pair<ShadowMap, DepthMap> sd_estimate(SDEstimator& sd, const FeaturePyramid& pyramid) {
  auto out = sd->forward(pyramid.taps);
  if (out.shadow.size(0) != 1) throw InputError("sd_estimate takes a single-sample pyramid");
  return {ShadowMap(grid_from_tensor(out.shadow)), DepthMap(grid_from_tensor(out.depth))};
}

torch::Tensor id_embed(IDEstimator& id, const FeaturePyramid& pyramid) { return id->forward(pyramid.taps); }

torch::Tensor triplet_loss(const torch::Tensor& anchor, const torch::Tensor& positive, const torch::Tensor& negative,
                           double margin) {
  if (!(margin > 0.0)) throw InputError("triplet margin must be > 0");
  if (!anchor.sizes().equals(positive.sizes()) || !anchor.sizes().equals(negative.sizes()) || anchor.dim() != 2) {
    throw InputError("triplet embeddings must share a [B, D] shape");
  }
  for (const auto* e : {&anchor, &positive, &negative}) {
    auto dev = (e->detach().norm(2, 1) - 1.0).abs().max().item<double>();
    if (!(dev <= 1e-4)) throw InputError("triplet embeddings must be unit length");
  }
  auto d_ap = 1.0 - (anchor * positive).sum(1);
  auto d_an = 1.0 - (anchor * negative).sum(1);
  return torch::relu(d_ap - d_an + margin).mean();
}

void validate(const EstimatorTrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw InputError("learning_rate must be > 0");
  if (!(cfg.weight_decay >= 0.0)) throw InputError("weight_decay must be >= 0");
  if (cfg.batch_size < 1) throw InputError("batch_size must be >= 1");
  if (!(cfg.margin > 0.0)) throw InputError("margin must be > 0");
  if (cfg.t_min < 0 || cfg.t_max <= cfg.t_min) throw InputError("timestep range must satisfy 0 <= t_min < t_max");
  if (cfg.epochs < 1) throw InputError("epochs must be >= 1");
}

json to_json(const EstimatorTrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate}, {"weight_decay", cfg.weight_decay},
          {"batch_size", cfg.batch_size},       {"margin", cfg.margin},
          {"t_min", cfg.t_min},                 {"t_max", cfg.t_max},
          {"epochs", cfg.epochs},               {"seed", cfg.seed},
          {"source", to_string(cfg.source)},    {"width", cfg.width},
          {"embedding_dim", cfg.embedding_dim}, {"val_timestep", cfg.val_timestep}};
}

EstimatorTrainConfig estimator_train_config_from_json(const json& j) {
  EstimatorTrainConfig cfg;
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.margin = j.value("margin", cfg.margin);
  cfg.t_min = j.value("t_min", cfg.t_min);
  cfg.t_max = j.value("t_max", cfg.t_max);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("source")) cfg.source = feature_source_from_string(j["source"].get<std::string>());
  cfg.width = j.value("width", cfg.width);
  cfg.embedding_dim = j.value("embedding_dim", cfg.embedding_dim);
  cfg.val_timestep = j.value("val_timestep", cfg.val_timestep);
  return cfg;
}

EstimatorTrainConfig estimator_preset(const std::string& name) {
  EstimatorTrainConfig cfg;
  if (name == "standard") return cfg;
  if (name == "low_lr") {
    cfg.learning_rate = 1e-4;
    return cfg;
  }
  throw InputError("unknown estimator preset '" + name + "' (expected standard or low_lr)");
}

json to_json(const EstimatorTrainReport& report) {
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_shadow_l1", e.val_shadow_l1},
                      {"val_depth_l1", e.val_depth_l1},
                      {"val_triplet_accuracy", e.val_triplet_accuracy}});
  }
  return {{"epochs", epochs},
          {"final_sd",
           {{"shadow_l1", report.final_sd.shadow_l1},
            {"depth_l1", report.final_sd.depth_l1},
            {"const_shadow_l1", report.final_sd.const_shadow_l1},
            {"const_depth_l1", report.final_sd.const_depth_l1},
            {"samples", report.final_sd.samples}}},
          {"final_id",
           {{"triplet_accuracy", report.final_id.triplet_accuracy},
            {"triplets", report.final_id.triplets},
            {"mean_intra_similarity", report.final_id.mean_intra_similarity},
            {"mean_inter_similarity", report.final_id.mean_inter_similarity}}},
          {"backbone_hash_before", report.backbone_hash_before},
          {"backbone_hash_after", report.backbone_hash_after},
          {"seconds", report.seconds},
          {"skipped_anchors", report.skipped_anchors}};
}

namespace {

constexpr int kEvalChunk = 64;

torch::Tensor alpha_bar_table(const DenoisingBackend& backend) {
  NoiseSchedule s(backend.train_steps(), 1, backend.cosine_offset());
  return torch::tensor(s.alpha_bar(), torch::kFloat64).to(torch::kFloat32);
}

/// One unconditional pass over noised images, turned into estimator inputs.
std::vector<torch::Tensor> features_for(const DenoisingBackend& backend, FeatureSource source,
                                        const torch::Tensor& table, const torch::Tensor& x0, const torch::Tensor& t,
                                        const torch::Tensor& noise) {
  auto ab = table.index_select(0, t).view({-1, 1, 1, 1});
  auto x_t = ab.sqrt() * x0 + (1.0 - ab).sqrt() * noise;
  auto labels = torch::full({x0.size(0)}, static_cast<int64_t>(backend.null_label()), torch::kInt64);
  auto out = backend.predict(x_t, t, labels, source == FeatureSource::internal);
  return estimator_inputs(source, out, x_t, ab.view({-1}));
}

void check_backbone(const DenoisingBackend& backend, const scene::DatasetManifest& manifest) {
  if (backend.image_size() != manifest.image_size) {
    throw InputError("dataset image size does not match the diffusion model");
  }
}

EstimatorArch arch_for(const DenoisingBackend& backend, const EstimatorTrainConfig& cfg) {
  EstimatorArch arch;
  arch.tap_channels = source_channels(backend, cfg.source);
  arch.width = cfg.width;
  arch.out_size = backend.image_size();
  arch.embedding_dim = cfg.embedding_dim;
  arch.source = cfg.source;
  return arch;
}

json checkpoint_header(const EstimatorArch& arch, const EstimatorTrainConfig& cfg, const DenoisingBackend& backend,
                       const EstimatorTrainReport& report) {
  return {{"arch", to_json(arch)},
          {"train", to_json(cfg)},
          {"backbone_hash", backend.weights_hash()},
          {"report", to_json(report)}};
}

template <typename Module>
Module load_estimator(const fs::path& path, const DenoisingBackend& backend, const char* kind) {
  const json header = checkpoint::read_header(path, kind);
  const auto hash = header.value("backbone_hash", "");
  if (hash != backend.weights_hash()) {
    throw CheckpointError(path.string() + " was trained against diffusion weights " + hash + ", loaded backbone is " +
                          backend.weights_hash());
  }
  EstimatorArch arch;
  try {
    arch = estimator_arch_from_json(header.at("arch"));
  } catch (const json::exception& e) {
    throw CheckpointError("malformed estimator header in " + path.string() + ": " + e.what());
  }
  if (arch.tap_channels != source_channels(backend, arch.source)) {
    throw CheckpointError(path.string() + " expects a different feature layout than the loaded backbone");
  }
  Module m(arch);
  checkpoint::load_weights(path, *m);
  freeze(*m);
  m->mark_trained();
  return m;
}

}  // namespace

SDEvaluation evaluate_sd(SDEstimator& sd, const DenoisingBackend& backend, const TensorDataset& data,
                         const torch::Tensor& indices, int timestep, std::uint64_t seed) {
  SDEvaluation ev;
  const int64_t n = indices.numel();
  if (n == 0) return ev;
  torch::NoGradGuard no_grad;
  const bool was_training = sd->is_training();
  sd->eval();
  const auto table = alpha_bar_table(backend);
  auto gen = make_generator(seed);
  auto x0 = image_to_model(data.images.index_select(0, indices));
  auto noise = torch::randn(x0.sizes(), gen, torch::kFloat32);
  auto t = timestep >= 0 ? torch::full({n}, static_cast<int64_t>(timestep), torch::kInt64)
                         : torch::randint(backend.train_steps(), {n}, gen, torch::kInt64);
  auto shadows = data.shadows.index_select(0, indices);
  auto depths = data.depths.index_select(0, indices);
  double shadow_sum = 0.0, depth_sum = 0.0;
  for (int64_t b = 0; b < n; b += kEvalChunk) {
    const int64_t e = std::min(n, b + kEvalChunk);
    auto out = sd->forward(features_for(backend, sd->arch().source, table, x0.slice(0, b, e), t.slice(0, b, e),
                                        noise.slice(0, b, e)));
    shadow_sum += (out.shadow - shadows.slice(0, b, e)).abs().sum().item<double>();
    depth_sum += (out.depth - depths.slice(0, b, e)).abs().sum().item<double>();
  }
  const double pixels = static_cast<double>(shadows.numel());
  ev.shadow_l1 = shadow_sum / pixels;
  ev.depth_l1 = depth_sum / pixels;
  ev.const_shadow_l1 = (shadows - shadows.mean()).abs().mean().item<double>();
  ev.const_depth_l1 = (depths - depths.mean()).abs().mean().item<double>();
  ev.samples = static_cast<int>(n);
  if (was_training) sd->train();
  return ev;
}

IDEvaluation evaluate_id(IDEstimator& id, const DenoisingBackend& backend, const TensorDataset& data,
                         const torch::Tensor& indices, int t_min, int t_max, std::uint64_t seed) {
  IDEvaluation ev;
  std::vector<int64_t> rows(indices.data_ptr<int64_t>(), indices.data_ptr<int64_t>() + indices.numel());
  std::map<int64_t, std::vector<int64_t>> by_identity;
  for (auto r : rows) by_identity[data.labels[r].item<int64_t>()].push_back(r);
  if (by_identity.size() < 2) return ev;

  std::mt19937_64 rng(seed);
  std::vector<int64_t> a_rows, p_rows, n_rows;
  for (auto r : rows) {
    const auto ident = data.labels[r].item<int64_t>();
    std::vector<int64_t> others;
    for (const auto& [k, v] : by_identity) {
      if (k != ident) others.insert(others.end(), v.begin(), v.end());
    }
    for (auto p : by_identity[ident]) {
      if (p == r) continue;
      a_rows.push_back(r);
      p_rows.push_back(p);
      n_rows.push_back(others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)]);
    }
  }
  if (a_rows.empty()) return ev;

  torch::NoGradGuard no_grad;
  const bool was_training = id->is_training();
  id->eval();
  const auto table = alpha_bar_table(backend);
  auto gen = make_generator(scene::mix_seed(seed, 1));
  auto embed = [&](const std::vector<int64_t>& which) {
    auto idx = torch::tensor(which, torch::kInt64);
    auto x0 = image_to_model(data.images.index_select(0, idx));
    auto noise = torch::randn(x0.sizes(), gen, torch::kFloat32);
    auto t = torch::randint(t_min, t_max, {idx.numel()}, gen, torch::kInt64);
    std::vector<torch::Tensor> parts;
    for (int64_t b = 0; b < idx.numel(); b += kEvalChunk) {
      const int64_t e = std::min<int64_t>(idx.numel(), b + kEvalChunk);
      parts.push_back(id->forward(features_for(backend, id->arch().source, table, x0.slice(0, b, e),
                                               t.slice(0, b, e), noise.slice(0, b, e))));
    }
    return torch::cat(parts, 0);
  };
  auto ea = embed(a_rows), ep = embed(p_rows), en = embed(n_rows);
  auto closer = (ea * ep).sum(1).gt((ea * en).sum(1));
  ev.triplets = static_cast<int>(a_rows.size());
  ev.triplet_accuracy = closer.to(torch::kFloat64).mean().item<double>();

  auto e = embed(rows);
  auto sim = torch::mm(e, e.t());
  auto labels = data.labels.index_select(0, indices);
  auto same = labels.unsqueeze(0).eq(labels.unsqueeze(1));
  auto off_diag = torch::ones_like(same).logical_xor(torch::eye(same.size(0), torch::kBool));
  auto intra = same.logical_and(off_diag);
  auto inter = same.logical_not();
  if (intra.any().item<bool>()) ev.mean_intra_similarity = sim.masked_select(intra).mean().item<double>();
  ev.mean_inter_similarity = sim.masked_select(inter).mean().item<double>();
  if (was_training) id->train();
  return ev;
}

EstimatorTrainReport train_sd_estimator(const scene::DatasetManifest& manifest,
                                        std::shared_ptr<const DenoisingBackend> backend,
                                        const EstimatorTrainConfig& cfg, const fs::path& out) {
  validate(cfg);
  check_backbone(*backend, manifest);
  const TensorDataset data = load_tensor_dataset(manifest);
  const int64_t n_train = data.train.numel();
  if (n_train == 0) throw InputError("dataset has an empty train split");
  if (!data.shadows.defined() || !data.depths.defined()) throw InputError("dataset lacks shadow/depth ground truth");

  EstimatorTrainReport report;
  report.backbone_hash_before = backend->weights_hash();
  torch::manual_seed(cfg.seed);
  const EstimatorArch arch = arch_for(*backend, cfg);
  SDEstimator sd(arch);
  torch::optim::Adam opt(sd->parameters(),
                         torch::optim::AdamOptions(cfg.learning_rate).weight_decay(cfg.weight_decay));
  const auto table = alpha_bar_table(*backend);
  const auto images = image_to_model(data.images);
  const int64_t per_epoch = std::max<int64_t>(1, n_train / cfg.batch_size);
  const std::uint64_t val_seed = scene::mix_seed(cfg.seed, 0x5d);

  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    sd->train();
    auto order = data.train.index_select(
        0, torch::randperm(n_train, make_generator(scene::mix_seed(cfg.seed, 1000003ULL * (epoch + 1))), torch::kInt64));
    double loss_sum = 0.0;
    for (int64_t s = 0; s < per_epoch; ++s) {
      auto gen = make_generator(scene::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) * per_epoch + s));
      const int64_t b = (s * cfg.batch_size) % n_train;
      auto rows = order.slice(0, b, std::min(n_train, b + cfg.batch_size));
      auto x0 = images.index_select(0, rows);
      auto t = torch::randint(cfg.t_min, cfg.t_max, {rows.numel()}, gen, torch::kInt64);
      auto noise = torch::randn(x0.sizes(), gen, torch::kFloat32);
      std::vector<torch::Tensor> inputs;
      {
        torch::NoGradGuard no_grad;
        inputs = features_for(*backend, cfg.source, table, x0, t, noise);
      }
      auto pred = sd->forward(inputs);
      auto loss = torch::l1_loss(pred.shadow, data.shadows.index_select(0, rows)) +
                  torch::l1_loss(pred.depth, data.depths.index_select(0, rows));
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += loss.item<double>();
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = loss_sum / per_epoch;
    if (data.val.numel() > 0) {
      auto ev = evaluate_sd(sd, *backend, data, data.val, -1, val_seed);
      stats.val_shadow_l1 = ev.shadow_l1;
      stats.val_depth_l1 = ev.depth_l1;
    }
    log::info("sd epoch {}/{} train {:.4f} val shadow {:.4f} depth {:.4f}", stats.epoch, cfg.epochs,
              stats.train_loss, stats.val_shadow_l1, stats.val_depth_l1);
    report.epochs.push_back(stats);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (data.val.numel() > 0) report.final_sd = evaluate_sd(sd, *backend, data, data.val, cfg.val_timestep, val_seed);
  report.backbone_hash_after = backend->weights_hash();
  if (report.backbone_hash_after != report.backbone_hash_before) {
    throw PreconditionError("diffusion weights changed during estimator training");
  }
  sd->mark_trained();
  checkpoint::save(out, SDEstimatorImpl::kCheckpointKind, checkpoint_header(arch, cfg, *backend, report), *sd);
  return report;
}

EstimatorTrainReport train_id_estimator(const scene::DatasetManifest& manifest,
                                        std::shared_ptr<const DenoisingBackend> backend,
                                        const EstimatorTrainConfig& cfg, const fs::path& out) {
  validate(cfg);
  check_backbone(*backend, manifest);
  const TensorDataset data = load_tensor_dataset(manifest);
  std::vector<int64_t> train(data.train.data_ptr<int64_t>(), data.train.data_ptr<int64_t>() + data.train.numel());
  const std::vector<int64_t> label_of(data.labels.data_ptr<int64_t>(), data.labels.data_ptr<int64_t>() + data.size());
  std::map<int64_t, std::vector<int64_t>> by_identity;
  for (auto r : train) by_identity[label_of[r]].push_back(r);
  if (by_identity.size() < 2) throw InputError("identity training needs at least two identities in the train split");

  EstimatorTrainReport report;
  std::vector<int64_t> anchors;
  for (auto r : train) {
    if (by_identity[label_of[r]].size() >= 2) {
      anchors.push_back(r);
    } else {
      ++report.skipped_anchors;
    }
  }
  if (report.skipped_anchors > 0) {
    log::warn("{} samples have no second lighting of their identity and are skipped as anchors",
              report.skipped_anchors);
  }
  if (anchors.empty()) throw InputError("no identity has two or more lightings");

  report.backbone_hash_before = backend->weights_hash();
  torch::manual_seed(cfg.seed);
  const EstimatorArch arch = arch_for(*backend, cfg);
  IDEstimator id(arch);
  torch::optim::Adam opt(id->parameters(),
                         torch::optim::AdamOptions(cfg.learning_rate).weight_decay(cfg.weight_decay));
  const auto table = alpha_bar_table(*backend);
  const auto images = image_to_model(data.images);
  const std::uint64_t val_seed = scene::mix_seed(cfg.seed, 0x1d);

  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    id->train();
    std::mt19937_64 rng(scene::mix_seed(cfg.seed, 7919ULL * (epoch + 1)));
    auto order = anchors;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < order.size(); ++s) {
      const int64_t a = order[s];
      const auto ident = label_of[a];
      const auto& same = by_identity[ident];
      int64_t p = a;
      while (p == a) p = same[std::uniform_int_distribution<std::size_t>(0, same.size() - 1)(rng)];
      int64_t n = a;
      while (label_of[n] == ident) {
        n = train[std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng)];
      }
      auto gen = make_generator(scene::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) * order.size() + s));
      auto rows = torch::tensor({a, p, n}, torch::kInt64);
      auto x0 = images.index_select(0, rows);
      auto t = torch::randint(cfg.t_min, cfg.t_max, {3}, gen, torch::kInt64);
      auto noise = torch::randn(x0.sizes(), gen, torch::kFloat32);
      std::vector<torch::Tensor> inputs;
      {
        torch::NoGradGuard no_grad;
        inputs = features_for(*backend, cfg.source, table, x0, t, noise);
      }
      auto e = id->forward(inputs);
      auto loss = triplet_loss(e.slice(0, 0, 1), e.slice(0, 1, 2), e.slice(0, 2, 3), cfg.margin);
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += loss.item<double>();
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    if (data.val.numel() > 0) {
      stats.val_triplet_accuracy =
          evaluate_id(id, *backend, data, data.val, cfg.t_min, cfg.t_max, val_seed).triplet_accuracy;
    }
    log::info("id epoch {}/{} train {:.4f} val triplet accuracy {:.3f}", stats.epoch, cfg.epochs, stats.train_loss,
              stats.val_triplet_accuracy);
    report.epochs.push_back(stats);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (data.val.numel() > 0) {
    report.final_id = evaluate_id(id, *backend, data, data.val, cfg.t_min, cfg.t_max, val_seed);
  }
  report.backbone_hash_after = backend->weights_hash();
  if (report.backbone_hash_after != report.backbone_hash_before) {
    throw PreconditionError("diffusion weights changed during estimator training");
  }
  id->mark_trained();
  checkpoint::save(out, IDEstimatorImpl::kCheckpointKind, checkpoint_header(arch, cfg, *backend, report), *id);
  return report;
}

SDEstimator load_sd_estimator(const fs::path& path, const DenoisingBackend& backend) {
  return load_estimator<SDEstimator>(path, backend, SDEstimatorImpl::kCheckpointKind);
}

IDEstimator load_id_estimator(const fs::path& path, const DenoisingBackend& backend) {
  return load_estimator<IDEstimator>(path, backend, IDEstimatorImpl::kCheckpointKind);
}

}  // namespace shadowsteer
