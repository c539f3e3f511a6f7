#include "shadowsteer/dataset.hpp"

#include <unordered_map>

#include "shadowsteer/errors.hpp"
#include "shadowsteer/image_io.hpp"
#include "shadowsteer/tensor_util.hpp"

namespace shadowsteer {

TensorDataset load_tensor_dataset(const scene::DatasetManifest& manifest) {
  if (manifest.samples.empty()) throw InputError("dataset has no samples");
  const int s = manifest.image_size;
  const auto n = static_cast<int64_t>(manifest.samples.size());
  TensorDataset ds;
  ds.image_size = s;
  ds.identities = manifest.identities;
  ds.images = torch::empty({n, 3, s, s});
  ds.shadows = torch::empty({n, 1, s, s});
  ds.depths = torch::empty({n, 1, s, s});
  ds.labels = torch::empty({n}, torch::kInt64);

  std::unordered_map<std::string, int64_t> row;
  for (int64_t i = 0; i < n; ++i) {
    const auto& e = manifest.samples[i];
    if (e.identity_id < 0 || e.identity_id >= manifest.identities) {
      throw InputError("sample " + e.id + " has identity outside the manifest's label range");
    }
    auto image = io::read_rgb_png(manifest.root / e.image);
    auto shadow = io::read_scalar_png(manifest.root / e.shadow);
    auto depth = io::read_scalar_png(manifest.root / e.depth);
    if (image.height() != s || shadow.height() != s || depth.height() != s) {
      throw InputError("sample " + e.id + " does not match the manifest image size");
    }
    ds.images[i] = to_tensor(image)[0];
    ds.shadows[i] = to_tensor(shadow)[0];
    ds.depths[i] = to_tensor(depth)[0];
    ds.labels[i] = e.identity_id;
    ds.ids.push_back(e.id);
    row.emplace(e.id, i);
  }
  auto indices = [&](const std::vector<std::string>& ids) {
    std::vector<int64_t> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
      auto it = row.find(id);
      if (it == row.end()) throw InputError("split references unknown sample " + id);
      out.push_back(it->second);
    }
    return torch::tensor(out, torch::kInt64);
  };
  ds.train = indices(manifest.train);
  ds.val = indices(manifest.val);
  return ds;
}

}  // namespace shadowsteer
