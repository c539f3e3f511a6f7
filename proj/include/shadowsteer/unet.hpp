#pragma once

#include <torch/torch.h>

#include <vector>

#include <json.hpp>

namespace shadowsteer {

struct UNetConfig {
  int image_channels = 3;
  int base_channels = 16;
  int embedding_dim = 128;
  /// Conditioning labels 0..num_labels-1; num_labels is the null label.
  int num_labels = 200;
  int groups = 8;
};

nlohmann::json to_json(const UNetConfig& cfg);
UNetConfig unet_config_from_json(const nlohmann::json& j);

struct UNetOutput {
  torch::Tensor eps;
  /// Encoder 32, encoder 16, bottleneck 8, decoder 16, decoder 32. Empty
  /// unless taps were requested.
  std::vector<torch::Tensor> taps;
};

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in_channels, int out_channels, int embedding_dim, int groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::Linear emb_proj_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Three-level conditional UNet predicting noise.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const UNetConfig& cfg);

  UNetOutput forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& labels, bool tap);

  const UNetConfig& config() const { return cfg_; }
  /// Channel count of each tap, in tap order.
  std::vector<int> tap_channels() const;
  /// Spatial downsampling factor of each tap relative to the input.
  static std::vector<int> tap_strides() { return {1, 2, 4, 2, 1}; }

 private:
  torch::Tensor embed_time(const torch::Tensor& t) const;

  UNetConfig cfg_;
  torch::nn::Sequential time_mlp_{nullptr};
  torch::nn::Embedding label_embedding_{nullptr};
  torch::nn::Conv2d in_conv_{nullptr}, down1_{nullptr}, down2_{nullptr}, up2_{nullptr}, up1_{nullptr}, out_conv_{nullptr};
  ResBlock enc1_{nullptr}, enc2_{nullptr}, mid1_{nullptr}, mid2_{nullptr}, dec2_{nullptr}, dec1_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
};
TORCH_MODULE(UNet);

}  // namespace shadowsteer
