#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "shadowsteer/dataset.hpp"
#include "shadowsteer/diffusion.hpp"
#include "shadowsteer/grid.hpp"

namespace shadowsteer {

/// Where an estimator reads from. Internal is the tapped feature pyramid; the
/// other two exist for the ablations and see a single 3-channel map.
enum class FeatureSource { internal, unet_output, predicted_x0 };

std::string to_string(FeatureSource source);
FeatureSource feature_source_from_string(const std::string& name);

/// Channel layout an estimator expects for a given backend and source.
std::vector<int> source_channels(const DenoisingBackend& backend, FeatureSource source);

/// Builds the estimator input list from one unconditional network pass.
/// `alpha_bar` holds alpha_bar(t) per batch row and is only used for predicted_x0.
std::vector<torch::Tensor> estimator_inputs(FeatureSource source, const UNetOutput& out, const torch::Tensor& x_t,
                                            const torch::Tensor& alpha_bar);

struct EstimatorArch {
  std::vector<int> tap_channels;
  int width = 64;
  int out_size = 32;
  int embedding_dim = 128;
  FeatureSource source = FeatureSource::internal;
};

nlohmann::json to_json(const EstimatorArch& arch);
EstimatorArch estimator_arch_from_json(const nlohmann::json& j);

/// Per-tap 3x3 projections to a common width, bilinear resize to the output
/// size, and a softmax-weighted sum.
class FusionBackboneImpl : public torch::nn::Module {
 public:
  FusionBackboneImpl(const std::vector<int>& tap_channels, int width, int out_size);
  torch::Tensor forward(const std::vector<torch::Tensor>& taps);
  torch::Tensor tap_weights() const { return torch::softmax(tap_logits_, 0); }
  torch::Tensor& tap_logits() { return tap_logits_; }

 private:
  std::vector<int> channels_;
  int out_size_;
  torch::nn::ModuleList projections_;
  torch::Tensor tap_logits_;
};
TORCH_MODULE(FusionBackbone);

struct SDOutput {
  torch::Tensor shadow;  // [B, 1, S, S] in [0, 1]
  torch::Tensor depth;
};

class SDEstimatorImpl : public torch::nn::Module {
 public:
  static constexpr const char* kCheckpointKind = "sd_estimator";
  explicit SDEstimatorImpl(const EstimatorArch& arch);
  SDOutput forward(const std::vector<torch::Tensor>& taps);
  const EstimatorArch& arch() const { return arch_; }
  FusionBackbone& backbone() { return backbone_; }
  /// Set by training and by loading a checkpoint.
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

 private:
  EstimatorArch arch_;
  bool trained_ = false;
  FusionBackbone backbone_{nullptr};
  torch::nn::Sequential shadow_head_{nullptr}, depth_head_{nullptr};
};
TORCH_MODULE(SDEstimator);

class IDEstimatorImpl : public torch::nn::Module {
 public:
  static constexpr const char* kCheckpointKind = "id_estimator";
  explicit IDEstimatorImpl(const EstimatorArch& arch);
  /// [B, embedding_dim], every row unit length.
  torch::Tensor forward(const std::vector<torch::Tensor>& taps);
  const EstimatorArch& arch() const { return arch_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

 private:
  EstimatorArch arch_;
  bool trained_ = false;
  FusionBackbone backbone_{nullptr};
  torch::nn::Sequential head_{nullptr};
  torch::nn::Linear project_{nullptr};
};
TORCH_MODULE(IDEstimator);

/// Convenience readouts on a single-sample pyramid.
std::pair<ShadowMap, DepthMap> sd_estimate(SDEstimator& sd, const FeaturePyramid& pyramid);
torch::Tensor id_embed(IDEstimator& id, const FeaturePyramid& pyramid);

/// mean over rows of max(0, d(a,p) - d(a,n) + margin), d = 1 - cosine. Rows
/// must be unit length.
torch::Tensor triplet_loss(const torch::Tensor& anchor, const torch::Tensor& positive, const torch::Tensor& negative,
                           double margin);

struct EstimatorTrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 8;  // SD only; ID batches are always one triplet
  double margin = 0.5;
  int t_min = 0;
  int t_max = 1000;  // exclusive
  int epochs = 30;
  std::uint64_t seed = 0;
  FeatureSource source = FeatureSource::internal;
  int width = 64;
  int embedding_dim = 128;
  /// Fixed timestep for the headline validation numbers.
  int val_timestep = 100;
};

void validate(const EstimatorTrainConfig& cfg);
nlohmann::json to_json(const EstimatorTrainConfig& cfg);
EstimatorTrainConfig estimator_train_config_from_json(const nlohmann::json& j);
/// "standard" (lr 1e-3, the default) or "low_lr" (lr 1e-4).
EstimatorTrainConfig estimator_preset(const std::string& name);

struct SDEvaluation {
  double shadow_l1 = 0.0;
  double depth_l1 = 0.0;
  /// L1 of predicting the evaluated set's mean value at every pixel.
  double const_shadow_l1 = 0.0;
  double const_depth_l1 = 0.0;
  int samples = 0;
};

/// Noises each indexed image once (fixed draws from `seed`) and scores the
/// estimator. timestep < 0 draws t uniformly per sample.
SDEvaluation evaluate_sd(SDEstimator& sd, const DenoisingBackend& backend, const TensorDataset& data,
                         const torch::Tensor& indices, int timestep, std::uint64_t seed);

struct IDEvaluation {
  double triplet_accuracy = 0.0;
  int triplets = 0;
  double mean_intra_similarity = 0.0;
  double mean_inter_similarity = 0.0;
};

/// Every indexed sample anchors one triplet per other lighting of its identity,
/// with a negative from another indexed identity; each element gets its own t
/// in [t_min, t_max) and its own noise.
IDEvaluation evaluate_id(IDEstimator& id, const DenoisingBackend& backend, const TensorDataset& data,
                         const torch::Tensor& indices, int t_min, int t_max, std::uint64_t seed);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_shadow_l1 = 0.0;
  double val_depth_l1 = 0.0;
  double val_triplet_accuracy = 0.0;
};

struct EstimatorTrainReport {
  std::vector<EpochStats> epochs;
  SDEvaluation final_sd;  // SD only, at val_timestep
  IDEvaluation final_id;  // ID only
  std::string backbone_hash_before;
  std::string backbone_hash_after;
  double seconds = 0.0;
  int skipped_anchors = 0;
};

nlohmann::json to_json(const EstimatorTrainReport& report);

EstimatorTrainReport train_sd_estimator(const scene::DatasetManifest& manifest,
                                        std::shared_ptr<const DenoisingBackend> backend,
                                        const EstimatorTrainConfig& cfg, const std::filesystem::path& out);

EstimatorTrainReport train_id_estimator(const scene::DatasetManifest& manifest,
                                        std::shared_ptr<const DenoisingBackend> backend,
                                        const EstimatorTrainConfig& cfg, const std::filesystem::path& out);

/// Loading refuses checkpoints trained against a different backbone.
SDEstimator load_sd_estimator(const std::filesystem::path& path, const DenoisingBackend& backend);
IDEstimator load_id_estimator(const std::filesystem::path& path, const DenoisingBackend& backend);

}  // namespace shadowsteer
