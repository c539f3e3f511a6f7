#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>

#include "shadowsteer/grid.hpp"

namespace shadowsteer {

/// [1, 1, H, W] float32.
torch::Tensor to_tensor(const Grid& grid);
/// [1, 3, H, W] float32 in the grid's own value range.
torch::Tensor to_tensor(const RgbImage& image);

/// Accepts [H, W], [1, H, W] or [1, 1, H, W].
Grid grid_from_tensor(const torch::Tensor& t);
/// Accepts [3, H, W] or [1, 3, H, W].
RgbImage image_from_tensor(const torch::Tensor& t);

/// Model space is [-1, 1]; images are [0, 1].
inline torch::Tensor image_to_model(const torch::Tensor& t) { return t * 2.0 - 1.0; }
inline torch::Tensor model_to_image(const torch::Tensor& t) { return ((t + 1.0) * 0.5).clamp(0.0, 1.0); }

torch::Generator make_generator(std::uint64_t seed);

/// FNV-1a over parameter names, shapes and raw bytes, as 16 hex digits.
std::string parameter_hash(const torch::nn::Module& module);

void freeze(torch::nn::Module& module);

}  // namespace shadowsteer
