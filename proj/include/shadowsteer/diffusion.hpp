#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shadowsteer/grid.hpp"
#include "shadowsteer/scene.hpp"
#include "shadowsteer/schedule.hpp"
#include "shadowsteer/unet.hpp"

namespace shadowsteer {

/// What the sampler, estimators and guidance need from a denoising network.
class DenoisingBackend {
 public:
  virtual ~DenoisingBackend() = default;

  virtual int image_size() const = 0;
  virtual int image_channels() const = 0;
  /// Labels are 0..num_labels-1; num_labels itself is the null label.
  virtual int num_labels() const = 0;
  int null_label() const { return num_labels(); }
  virtual int train_steps() const = 0;
  virtual double cosine_offset() const = 0;
  virtual std::vector<int> tap_channels() const = 0;
  virtual std::vector<int> tap_strides() const = 0;
  virtual std::string weights_hash() const = 0;

  /// Raw noise prediction. Differentiable in x under the caller's grad mode.
  virtual UNetOutput predict(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& labels,
                             bool tap) const = 0;
};

/// The trainable pixel-space backend.
class DiffusionModel final : public DenoisingBackend {
 public:
  static constexpr const char* kCheckpointKind = "diffusion";

  DiffusionModel(const UNetConfig& unet, int image_size, int train_steps = 1000, double cosine_offset = 0.008);

  /// Loads weights and freezes them. Throws CheckpointError on any mismatch.
  static std::shared_ptr<DiffusionModel> load(const std::filesystem::path& path);

  int image_size() const override { return image_size_; }
  int image_channels() const override { return unet_->config().image_channels; }
  int num_labels() const override { return unet_->config().num_labels; }
  int train_steps() const override { return train_steps_; }
  double cosine_offset() const override { return cosine_offset_; }
  std::vector<int> tap_channels() const override { return unet_->tap_channels(); }
  std::vector<int> tap_strides() const override { return UNetImpl::tap_strides(); }
  std::string weights_hash() const override;
  UNetOutput predict(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& labels,
                     bool tap) const override;

  UNet& unet() { return unet_; }
  const UNetConfig& unet_config() const { return unet_->config(); }
  bool frozen() const { return frozen_; }
  void freeze();

  /// Model description stored in every checkpoint header.
  nlohmann::json describe() const;

 private:
  UNet unet_;
  int image_size_;
  int train_steps_;
  double cosine_offset_;
  bool frozen_ = false;
  std::string frozen_hash_;
};

struct SamplerConfig {
  double cfg_scale = 6.0;
  int inference_steps = 100;
  /// Only deterministic sampling (0) is implemented.
  double eta = 0.0;
  bool clip_x0 = true;
};

void validate(const SamplerConfig& cfg);
nlohmann::json to_json(const SamplerConfig& cfg);
SamplerConfig sampler_config_from_json(const nlohmann::json& j);

struct LatentState {
  torch::Tensor x;  // [1, C, S, S] in model space
  int step_index = 0;
  std::uint64_t seed = 0;
  int label = 0;
};

struct FeaturePyramid {
  std::vector<torch::Tensor> taps;
  int step_index = -1;
};

struct ForwardResult {
  torch::Tensor eps;
  torch::Tensor eps_uncond;
  std::optional<FeaturePyramid> pyramid;
};

struct StepResult {
  LatentState next;
  torch::Tensor predicted_x0;
};

/// Called before the network pass at every step; returns the x_t to use.
using StepHook = std::function<torch::Tensor(const LatentState&)>;

struct GenerationResult {
  RgbImage image;
  torch::Tensor final_x;
  int steps_run = 0;
};

/// DDIM sampling with classifier-free guidance over a shared backend.
class Sampler {
 public:
  Sampler(std::shared_ptr<const DenoisingBackend> backend, SamplerConfig cfg = {});

  const DenoisingBackend& backend() const { return *backend_; }
  std::shared_ptr<const DenoisingBackend> backend_ptr() const { return backend_; }
  const SamplerConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  /// Gaussian x at step 0, drawn from a generator seeded by `seed` alone.
  LatentState initial_state(int label, std::uint64_t seed) const;

  /// Guided noise estimate. Taps, when requested, come from the unconditional pass.
  ForwardResult unet_forward(const LatentState& state, bool tap) const;
  /// Unconditional pass only; what the guidance loop differentiates.
  ForwardResult unconditional_forward(const torch::Tensor& x, int step_index, bool tap) const;

  StepResult denoise_step(const LatentState& state, const torch::Tensor& eps) const;

  GenerationResult generate(int label, std::uint64_t seed, const StepHook& hook = {}) const;

 private:
  void check_state(const LatentState& state) const;

  std::shared_ptr<const DenoisingBackend> backend_;
  SamplerConfig cfg_;
  NoiseSchedule schedule_;
};

struct DiffusionTrainConfig {
  int steps = 6000;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double label_dropout = 0.1;
  double grad_clip = 1.0;
  int base_channels = 16;
  int train_steps = 1000;
  std::uint64_t seed = 0;
  int log_every = 200;
  /// 0 writes only the final checkpoint.
  int checkpoint_every = 1000;
};

nlohmann::json to_json(const DiffusionTrainConfig& cfg);
DiffusionTrainConfig diffusion_train_config_from_json(const nlohmann::json& j);

struct DiffusionTrainReport {
  std::vector<double> losses;  // one entry per optimisation step, including resumed history
  double initial_loss = 0.0;   // mean of the first 10 steps
  double final_loss = 0.0;     // mean of the last 100 steps
  double seconds = 0.0;
  int steps = 0;
};

/// Trains the eps-prediction objective on identity labels. With `resume`, the
/// optimiser state and step counter are restored and training continues up to
/// cfg.steps total.
DiffusionTrainReport train_diffusion(const scene::DatasetManifest& manifest, const DiffusionTrainConfig& cfg,
                                     const std::filesystem::path& out_checkpoint,
                                     const std::optional<std::filesystem::path>& resume = std::nullopt);

}  // namespace shadowsteer
