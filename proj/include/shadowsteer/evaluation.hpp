#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shadowsteer/estimators.hpp"
#include "shadowsteer/guidance.hpp"

namespace shadowsteer {

/// Timestep of the light-noise pass used to read finished images.
constexpr int kReadoutTimestep = 50;

/// Cosine similarity of the identity embeddings of two images, each read
/// through one unconditional pass at t = 50 with the same fixed noise.
double toy_cvs(const RgbImage& a, const RgbImage& b, IDEstimator& id, const DenoisingBackend& backend);

/// Shadow estimate of a finished image (same light-noise pass as toy_cvs).
ShadowMap estimate_image_shadow(const RgbImage& image, SDEstimator& sd, const DenoisingBackend& backend);

/// L1 between the final image's estimated shadow and the run's target.
double shadow_compliance(const ControlledResult& result, SDEstimator& sd, const DenoisingBackend& backend);

struct AblationVariant {
  std::string tag;
  std::string description;
  GuidanceConfig guidance;
  FeatureSource sd_source = FeatureSource::internal;
};

/// Variants a through g. Accepts full tags ("c_last_step") or their letters.
AblationVariant ablation_variant(const std::string& tag_or_letter);
std::vector<std::string> all_ablation_tags();

/// Left half of the image (columns < size/2).
BinaryMask half_face_mask(int size);
BinaryMask full_mask(int size);

struct AblationSettings {
  int n_seeds = 20;
  std::uint64_t seed_base = 0;
  /// Conditioning label for seed i is labels[i % labels.size()].
  std::vector<int> labels;
  ShadowControl control;
  GuidanceConfig base;
  SamplerConfig sampler;
};

struct AblationModels {
  std::shared_ptr<const DenoisingBackend> backend;
  SDEstimator sd{nullptr};  // internal features; also the scorer for every variant
  IDEstimator id{nullptr};
  std::map<FeatureSource, SDEstimator> variant_sd;  // unet_output and predicted_x0 retrains
};

struct VariantRow {
  std::string tag;
  std::string description;
  std::vector<std::uint64_t> seeds;
  std::vector<double> compliance;
  std::vector<double> toy_cvs;
  std::vector<double> deviation;
  double mean_compliance = 0.0;
  double mean_toy_cvs = 0.0;
  double mean_deviation = 0.0;
};

struct AblationReport {
  static constexpr int kVersion = 1;
  std::vector<VariantRow> rows;
  std::vector<std::uint64_t> seeds;
  std::vector<int> labels;
  nlohmann::json control;
  int samples = 0;
};

/// Runs every variant on the same (seed, label, control) tuples.
AblationReport run_ablation(const std::vector<std::string>& variants, const AblationSettings& settings,
                            const AblationModels& models);

/// Refuses rows whose seed lists differ.
AblationReport assemble_report(std::vector<VariantRow> rows, const AblationSettings& settings);

nlohmann::json to_json(const AblationReport& report);
std::string to_markdown(const AblationReport& report);

/// Checks the fields and types of a serialized report.
void validate_report_json(const nlohmann::json& j);

}  // namespace shadowsteer
