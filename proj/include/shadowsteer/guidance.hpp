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

#include "shadowsteer/diffusion.hpp"
#include "shadowsteer/estimators.hpp"
#include "shadowsteer/geometry.hpp"
#include "shadowsteer/grid.hpp"

namespace shadowsteer {

enum class ControlMode { mask, directional_light };

struct ShadowControl {
  ControlMode mode = ControlMode::mask;
  std::optional<BinaryMask> mask;
  double darkness = 1.0;
  std::optional<LightPosition> light;
  double strength = 1.0;
};

/// Exactly one payload, matching the mode; mask sized to the model.
void validate(const ShadowControl& control, int image_size);
/// Masks travel as base64 PNG, lights as [x, y, z].
nlohmann::json to_json(const ShadowControl& control);
ShadowControl shadow_control_from_json(const nlohmann::json& j);

/// Where the identity term of the loss comes from. embedding is the method;
/// the L1 forms replace it in the ablations.
enum class IdentityTerm { embedding, input_l1, output_l1 };

struct GuidanceConfig {
  int intervention_step = 40;
  double lambda_shadow = 1.0;
  double lambda_identity = 3.0;
  int max_iterations = 30;
  double learning_rate = 5e-2;
  double divergence_factor = 10.0;
  IdentityTerm identity_term = IdentityTerm::embedding;
};

void validate(const GuidanceConfig& cfg, const SamplerConfig& sampler);
nlohmann::json to_json(const GuidanceConfig& cfg);
GuidanceConfig guidance_config_from_json(const nlohmann::json& j);
/// "standard" (lr 5e-2, the default) or "low_lr" (lr 2e-4).
GuidanceConfig guidance_preset(const std::string& name);
int guidance_iterations(double strength, int max_iterations);

/// Mask mode darkens the estimate under the mask; light mode ray-casts the
/// estimated depth.
ShadowMap acquire_target_shadow(const ShadowControl& control, const ShadowMap& estimated_shadow,
                                const DepthMap& estimated_depth, const RaycastConfig& raycast = {});

struct LossTerms {
  torch::Tensor shadow;    // mean |S_current - S_target|
  torch::Tensor identity;  // 1 - cos(I_current, I_ref)
  torch::Tensor total;
};

LossTerms guidance_loss(const torch::Tensor& s_current, const torch::Tensor& s_target, const torch::Tensor& i_current,
                        const torch::Tensor& i_ref, const GuidanceConfig& cfg);

struct TraceEntry {
  double shadow = 0.0;
  double identity = 0.0;
  double total = 0.0;
};

/// Everything the estimators say about one latent.
struct Readout {
  torch::Tensor shadow;     // [1, 1, S, S]
  torch::Tensor depth;      // [1, 1, S, S]
  torch::Tensor embedding;  // [1, D]
  torch::Tensor eps_uncond;
};

struct OptimizeResult {
  LatentState state;
  std::vector<TraceEntry> trace;
  bool diverged = false;
  double initial_shadow_l1 = 0.0;
  double final_shadow_l1 = 0.0;
  double initial_total = 0.0;
  double final_total = 0.0;
  double final_identity_cosine = 1.0;
};

struct ControlledResult {
  RgbImage image;
  ShadowMap target_shadow;
  ShadowMap est_shadow_before;
  ShadowMap est_shadow_after;
  DepthMap est_depth;
  std::vector<TraceEntry> trace;
  bool diverged = false;
  int iterations = 0;
  int reference_captures = 0;
  double initial_shadow_l1 = 0.0;
  double final_shadow_l1 = 0.0;
  double final_identity_cosine = 1.0;
  int label = 0;
  std::uint64_t seed = 0;
  ShadowControl control;
  GuidanceConfig guidance;
  SamplerConfig sampler;
  std::string backbone_hash;
};

using ProgressFn = std::function<void(int step, int total)>;

/// The test-time control loop over a frozen backend and frozen estimators.
class ShadowGuide {
 public:
  ShadowGuide(std::shared_ptr<const DenoisingBackend> backend, SDEstimator sd, IDEstimator id,
              SamplerConfig sampler = {});

  const Sampler& sampler() const { return sampler_; }
  const DenoisingBackend& backend() const { return sampler_.backend(); }
  SDEstimator& sd() { return sd_; }
  IDEstimator& id() { return id_; }

  /// Differentiable under the caller's grad mode.
  Readout readout(const torch::Tensor& x, int step_index);

  OptimizeResult optimize_latent(const LatentState& state, const ShadowMap& target, const torch::Tensor& i_ref,
                                 const GuidanceConfig& cfg, int iterations);

  ControlledResult generate_with_control(int label, std::uint64_t seed, const ShadowControl& control,
                                         const GuidanceConfig& cfg, const ProgressFn& progress = {});

 private:
  Sampler sampler_;
  SDEstimator sd_;
  IDEstimator id_;
  torch::Tensor alpha_bar_;
};

/// Run directory: result.png, target_shadow.png, est_shadow_before.png,
/// est_shadow_after.png, est_depth.png, trace.json, config.json.
void write_run(const ControlledResult& result, const std::filesystem::path& dir);
nlohmann::json run_config_json(const ControlledResult& result);

struct RunRequest {
  int label = 0;
  std::uint64_t seed = 0;
  ShadowControl control;
  GuidanceConfig guidance;
  SamplerConfig sampler;
};

/// Reads config.json back into the request that produced it.
RunRequest run_request_from_json(const nlohmann::json& config);

}  // namespace shadowsteer
