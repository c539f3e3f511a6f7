#pragma once

#include <torch/torch.h>

#include <vector>

namespace shadowsteer {

/// Cosine noise schedule with a strided DDIM step mapping.
class NoiseSchedule {
 public:
  NoiseSchedule() : NoiseSchedule(1000, 100) {}
  NoiseSchedule(int train_steps, int inference_steps, double cosine_offset = 0.008);

  int train_steps() const { return train_steps_; }
  int inference_steps() const { return inference_steps_; }
  double cosine_offset() const { return cosine_offset_; }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bar() const { return alpha_bar_; }
  double alpha_bar_at(int t) const;

  /// Training timestep visited at sampler step k (k = 0 is the noisiest).
  int timestep(int step_index) const;
  /// alpha_bar at the step after k; 1 after the final step.
  double alpha_bar_next(int step_index) const;

 private:
  int train_steps_;
  int inference_steps_;
  double cosine_offset_;
  std::vector<double> betas_;
  std::vector<double> alpha_bar_;
};

/// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise.
torch::Tensor add_noise(const NoiseSchedule& schedule, const torch::Tensor& x0, int t, const torch::Tensor& noise);
/// Per-sample timesteps, t is an int64 tensor of shape [B].
torch::Tensor add_noise(const NoiseSchedule& schedule, const torch::Tensor& x0, const torch::Tensor& t,
                        const torch::Tensor& noise);

/// Inverse of add_noise given the noise: (x_t - sqrt(1 - ab_t) eps) / sqrt(ab_t).
torch::Tensor predict_x0(const NoiseSchedule& schedule, const torch::Tensor& x_t, int t, const torch::Tensor& eps);

struct DdimUpdate {
  torch::Tensor x_next;
  torch::Tensor predicted_x0;  // before clipping
};

/// Deterministic (eta = 0) DDIM move from step k to k + 1. When clip is set the
/// x0 estimate is clamped to [-1, 1] before re-noising.
DdimUpdate ddim_update(const NoiseSchedule& schedule, const torch::Tensor& x_t, const torch::Tensor& eps,
                       int step_index, bool clip = true);

}  // namespace shadowsteer
