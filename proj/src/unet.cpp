#include "shadowsteer/unet.hpp"

#include <cmath>
#include <numeric>

#include "shadowsteer/errors.hpp"

namespace nn = torch::nn;

namespace shadowsteer {
namespace {

int group_count(int channels, int wanted) { return std::gcd(channels, wanted); }

nn::Conv2d conv3x3(int in, int out, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

constexpr int kTimeFeatures = 64;

}  // namespace

nlohmann::json to_json(const UNetConfig& cfg) {
  return {{"image_channels", cfg.image_channels},
          {"base_channels", cfg.base_channels},
          {"embedding_dim", cfg.embedding_dim},
          {"num_labels", cfg.num_labels},
          {"groups", cfg.groups}};
}

UNetConfig unet_config_from_json(const nlohmann::json& j) {
  UNetConfig cfg;
  cfg.image_channels = j.at("image_channels").get<int>();
  cfg.base_channels = j.at("base_channels").get<int>();
  cfg.embedding_dim = j.at("embedding_dim").get<int>();
  cfg.num_labels = j.at("num_labels").get<int>();
  cfg.groups = j.at("groups").get<int>();
  return cfg;
}

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, int embedding_dim, int groups) {
  norm1_ = register_module("norm1", nn::GroupNorm(group_count(in_channels, groups), in_channels));
  conv1_ = register_module("conv1", conv3x3(in_channels, out_channels));
  emb_proj_ = register_module("emb_proj", nn::Linear(embedding_dim, out_channels));
  norm2_ = register_module("norm2", nn::GroupNorm(group_count(out_channels, groups), out_channels));
  conv2_ = register_module("conv2", conv3x3(out_channels, out_channels));
  if (in_channels != out_channels) {
    skip_ = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
  auto h = conv1_(torch::silu(norm1_(x)));
  h = h + emb_proj_(torch::silu(emb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2_(torch::silu(norm2_(h)));
  return (skip_ ? skip_(x) : x) + h;
}

UNetImpl::UNetImpl(const UNetConfig& cfg) : cfg_(cfg) {
  if (cfg.base_channels < 1 || cfg.num_labels < 1) throw InputError("invalid UNet configuration");
  const int c1 = cfg.base_channels, c2 = 2 * c1, c3 = 4 * c1;
  const int e = cfg.embedding_dim;
  const int g = cfg.groups;

  time_mlp_ = register_module("time_mlp", nn::Sequential(nn::Linear(kTimeFeatures, e), nn::SiLU(), nn::Linear(e, e)));
  // Zero-initialised, and the null label reads as a zero vector, so labels that
  // never receive gradient stay indistinguishable from the unconditional pass.
  label_embedding_ = register_module("label_embedding", nn::Embedding(cfg.num_labels, e));
  {
    torch::NoGradGuard no_grad;
    label_embedding_->weight.zero_();
  }

  in_conv_ = register_module("in_conv", conv3x3(cfg.image_channels, c1));
  enc1_ = register_module("enc1", ResBlock(c1, c1, e, g));
  down1_ = register_module("down1", conv3x3(c1, c2, 2));
  enc2_ = register_module("enc2", ResBlock(c2, c2, e, g));
  down2_ = register_module("down2", conv3x3(c2, c3, 2));
  mid1_ = register_module("mid1", ResBlock(c3, c3, e, g));
  mid2_ = register_module("mid2", ResBlock(c3, c3, e, g));
  up2_ = register_module("up2", conv3x3(c3, c2));
  dec2_ = register_module("dec2", ResBlock(2 * c2, c2, e, g));
  up1_ = register_module("up1", conv3x3(c2, c1));
  dec1_ = register_module("dec1", ResBlock(2 * c1, c1, e, g));
  out_norm_ = register_module("out_norm", nn::GroupNorm(group_count(c1, g), c1));
  out_conv_ = register_module("out_conv", conv3x3(c1, cfg.image_channels));
}

std::vector<int> UNetImpl::tap_channels() const {
  const int c1 = cfg_.base_channels;
  return {c1, 2 * c1, 4 * c1, 2 * c1, c1};
}

torch::Tensor UNetImpl::embed_time(const torch::Tensor& t) const {
  const int half = kTimeFeatures / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / half);
  auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

UNetOutput UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& labels, bool tap) {
  if (x.dim() != 4 || x.size(1) != cfg_.image_channels) throw InputError("UNet input must be [B, C, H, W]");
  if (x.size(2) % 4 != 0 || x.size(3) % 4 != 0) throw InputError("UNet input size must be divisible by 4");
  if (t.size(0) != x.size(0) || labels.size(0) != x.size(0)) throw InputError("UNet: batch size mismatch");

  if (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() > cfg_.num_labels) {
    throw InputError("UNet: label out of range");
  }
  auto is_cond = labels.lt(cfg_.num_labels);
  auto label_emb = label_embedding_(labels.clamp_max(cfg_.num_labels - 1)) * is_cond.unsqueeze(1).to(x.dtype());
  auto emb = time_mlp_->forward(embed_time(t).to(x.dtype())) + label_emb;

  auto h0 = in_conv_(x);
  auto e1 = enc1_(h0, emb);
  auto e2 = enc2_(down1_(e1), emb);
  auto m = mid2_(mid1_(down2_(e2), emb), emb);
  auto up = [](const torch::Tensor& v) {
    return nn::functional::interpolate(
        v, nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
  };
  auto d2 = dec2_(torch::cat({up2_(up(m)), e2}, 1), emb);
  auto d1 = dec1_(torch::cat({up1_(up(d2)), e1}, 1), emb);

  UNetOutput out;
  out.eps = out_conv_(torch::silu(out_norm_(d1)));
  if (tap) out.taps = {e1, e2, m, d2, d1};
  return out;
}

}  // namespace shadowsteer
