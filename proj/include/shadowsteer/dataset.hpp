#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "shadowsteer/scene.hpp"

namespace shadowsteer {

/// A whole dataset held in memory as tensors, in manifest sample order.
struct TensorDataset {
  torch::Tensor images;   // [N, 3, S, S] in [0, 1]
  torch::Tensor shadows;  // [N, 1, S, S]
  torch::Tensor depths;   // [N, 1, S, S]
  torch::Tensor labels;   // [N] int64 identity ids
  torch::Tensor train;    // int64 row indices
  torch::Tensor val;
  std::vector<std::string> ids;
  int image_size = 0;
  int identities = 0;

  int64_t size() const { return images.size(0); }
};

/// Reads every image, shadow and depth PNG the manifest references.
TensorDataset load_tensor_dataset(const scene::DatasetManifest& manifest);

}  // namespace shadowsteer
