#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "shadowsteer/geometry.hpp"
#include "shadowsteer/grid.hpp"

namespace shadowsteer::scene {

using Rgb = std::array<float, 3>;

/// Everything needed to reproduce one synthetic subject.
struct IdentityParams {
  int identity_id = 0;
  std::uint64_t heightfield_seed = 0;
  /// background, skin, marking
  std::array<Rgb, 3> albedo_palette{};
  std::uint64_t marking_seed = 0;

  friend bool operator==(const IdentityParams&, const IdentityParams&) = default;
};

struct Sample {
  RgbImage image;
  ShadowMap shadow;
  DepthMap depth;
  int identity_id = 0;
  LightPosition light;
};

struct ManifestEntry {
  std::string id;
  int identity_id = 0;
  int light_index = 0;
  LightPosition light;
  std::string image;   // paths relative to the dataset root
  std::string shadow;
  std::string depth;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;

  int version = kVersion;
  int image_size = 32;
  int identities = 0;
  int lights_per_identity = 0;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> samples;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<int> val_identities;
  std::filesystem::path root;  // not serialized

  const ManifestEntry& entry(const std::string& id) const;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);
DatasetManifest load_manifest(const std::filesystem::path& path_or_dir);

IdentityParams sample_identity(std::uint64_t seed, int identity_id = 0);

/// Head-and-features heightfield in [0.1, 0.9], quantized to the 16-bit
/// storage grid so a reloaded depth map is bit-identical.
DepthMap identity_heightfield(const IdentityParams& identity, int size);
RgbImage identity_albedo(const IdentityParams& identity, int size);

/// Per-pixel max(0, n . l) with n from central differences of the heightfield
/// and l the unit vector from the surface point towards the light.
Grid lambertian_shading(const DepthMap& depth, const LightPosition& light);

/// image = albedo * shading * shadow, shadow from raycast_shadow.
Sample render_sample(const IdentityParams& identity, const LightPosition& light, int size);

/// Hemisphere grid (8 azimuths x 3 elevations) with jitter; `count` distinct
/// cells per identity, deterministic in (seed, identity).
std::vector<LightPosition> identity_lights(std::uint64_t seed, int identity_id, int count);

struct BuildOptions {
  bool overwrite = false;
  /// Fraction of samples held out, rounded to whole identities.
  double val_fraction = 0.05;
};

DatasetManifest build_dataset(int n_identities, int lights_per_identity, int size,
                              const std::filesystem::path& out_dir, std::uint64_t seed,
                              const BuildOptions& options = {});

/// Deterministic 64-bit mixing for seed derivation.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace shadowsteer::scene
