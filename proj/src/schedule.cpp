#include "shadowsteer/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "shadowsteer/errors.hpp"

namespace shadowsteer {

NoiseSchedule::NoiseSchedule(int train_steps, int inference_steps, double cosine_offset)
    : train_steps_(train_steps), inference_steps_(inference_steps), cosine_offset_(cosine_offset) {
  if (train_steps < 2) throw InputError("train_steps must be at least 2");
  if (inference_steps < 1 || inference_steps > train_steps) {
    throw InputError("inference_steps must lie in [1, train_steps]");
  }
  auto f = [&](double t) {
    const double v = std::cos((t / train_steps + cosine_offset) / (1.0 + cosine_offset) * std::numbers::pi / 2.0);
    return v * v;
  };
  betas_.resize(train_steps);
  alpha_bar_.resize(train_steps);
  double running = 1.0;
  for (int t = 0; t < train_steps; ++t) {
    betas_[t] = std::clamp(1.0 - f(t + 1) / f(t), 1e-8, 0.999);
    running *= 1.0 - betas_[t];
    alpha_bar_[t] = running;
  }
  if (1.0 - alpha_bar_[0] > 1e-3) {
    throw InputError("schedule too coarse: alpha_bar(0) must be within 1e-3 of 1 (raise train_steps or lower cosine_offset)");
  }
}

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t < 0 || t >= train_steps_) throw InputError("timestep " + std::to_string(t) + " out of range");
  return alpha_bar_[t];
}

int NoiseSchedule::timestep(int step_index) const {
  if (step_index < 0 || step_index >= inference_steps_) {
    throw InputError("step index " + std::to_string(step_index) + " out of range");
  }
  return static_cast<int>((static_cast<long>(inference_steps_ - 1 - step_index) * train_steps_) / inference_steps_);
}

double NoiseSchedule::alpha_bar_next(int step_index) const {
  return step_index + 1 >= inference_steps_ ? 1.0 : alpha_bar_at(timestep(step_index + 1));
}

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) throw InputError(std::string(what) + ": shape mismatch");
}

}  // namespace

torch::Tensor add_noise(const NoiseSchedule& schedule, const torch::Tensor& x0, int t, const torch::Tensor& noise) {
  check_same_shape(x0, noise, "add_noise");
  const double ab = schedule.alpha_bar_at(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

torch::Tensor add_noise(const NoiseSchedule& schedule, const torch::Tensor& x0, const torch::Tensor& t,
                        const torch::Tensor& noise) {
  check_same_shape(x0, noise, "add_noise");
  if (t.dim() != 1 || t.size(0) != x0.size(0)) throw InputError("add_noise: need one timestep per sample");
  if (t.min().item<int64_t>() < 0 || t.max().item<int64_t>() >= schedule.train_steps()) {
    throw InputError("add_noise: timestep out of range");
  }
  auto table = torch::tensor(schedule.alpha_bar(), torch::dtype(torch::kFloat64)).to(x0.dtype());
  auto ab = table.index_select(0, t).view({-1, 1, 1, 1});
  return ab.sqrt() * x0 + (1.0 - ab).sqrt() * noise;
}

torch::Tensor predict_x0(const NoiseSchedule& schedule, const torch::Tensor& x_t, int t, const torch::Tensor& eps) {
  check_same_shape(x_t, eps, "predict_x0");
  const double ab = schedule.alpha_bar_at(t);
  return (x_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
}

DdimUpdate ddim_update(const NoiseSchedule& schedule, const torch::Tensor& x_t, const torch::Tensor& eps,
                       int step_index, bool clip) {
  const int t = schedule.timestep(step_index);
  DdimUpdate out;
  out.predicted_x0 = predict_x0(schedule, x_t, t, eps);
  const torch::Tensor x0 = clip ? out.predicted_x0.clamp(-1.0, 1.0) : out.predicted_x0;
  // Re-derive eps from the (possibly clipped) x0 so the update stays on the ray.
  const double ab = schedule.alpha_bar_at(t);
  const torch::Tensor eps_used = clip ? (x_t - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab) : eps;
  const double ab_next = schedule.alpha_bar_next(step_index);
  out.x_next = std::sqrt(ab_next) * x0 + std::sqrt(1.0 - ab_next) * eps_used;
  return out;
}

}  // namespace shadowsteer
