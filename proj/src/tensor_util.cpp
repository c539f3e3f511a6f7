#include "shadowsteer/tensor_util.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <fmt/format.h>

#include <cstring>

#include "shadowsteer/errors.hpp"

namespace shadowsteer {

torch::Tensor to_tensor(const Grid& grid) {
  auto values = grid.values();
  return torch::from_blob(const_cast<float*>(values.data()), {1, 1, grid.height(), grid.width()}, torch::kFloat32)
      .clone();
}

torch::Tensor to_tensor(const RgbImage& image) {
  auto values = image.values();
  return torch::from_blob(const_cast<float*>(values.data()), {1, image.height(), image.width(), 3}, torch::kFloat32)
      .permute({0, 3, 1, 2})
      .contiguous();
}

Grid grid_from_tensor(const torch::Tensor& t) {
  auto v = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  while (v.dim() > 2) {
    if (v.size(0) != 1) throw InputError("expected a single-channel map tensor");
    v = v.squeeze(0);
  }
  if (v.dim() != 2) throw InputError("expected a 2-D map tensor");
  const int h = static_cast<int>(v.size(0));
  const int w = static_cast<int>(v.size(1));
  std::vector<float> values(v.data_ptr<float>(), v.data_ptr<float>() + static_cast<std::size_t>(h) * w);
  return Grid(h, w, std::move(values));
}

RgbImage image_from_tensor(const torch::Tensor& t) {
  auto v = t.detach().to(torch::kCPU, torch::kFloat32);
  if (v.dim() == 4) {
    if (v.size(0) != 1) throw InputError("expected a single image tensor");
    v = v.squeeze(0);
  }
  if (v.dim() != 3 || v.size(0) != 3) throw InputError("expected a [3, H, W] image tensor");
  v = v.permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(v.size(0));
  const int w = static_cast<int>(v.size(1));
  std::vector<float> values(v.data_ptr<float>(), v.data_ptr<float>() + static_cast<std::size_t>(h) * w * 3);
  return RgbImage(h, w, std::move(values));
}

torch::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

std::string parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& item : module.named_parameters(true)) {
    feed(item.key().data(), item.key().size());
    auto v = item.value().detach().to(torch::kCPU).contiguous();
    for (auto s : v.sizes()) feed(&s, sizeof(s));
    feed(v.data_ptr(), static_cast<std::size_t>(v.numel()) * v.element_size());
  }
  return fmt::format("{:016x}", h);
}

void freeze(torch::nn::Module& module) {
  for (auto& p : module.parameters(true)) p.set_requires_grad(false);
  module.eval();
}

}  // namespace shadowsteer
