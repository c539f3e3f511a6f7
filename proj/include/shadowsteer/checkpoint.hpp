#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

namespace shadowsteer::checkpoint {

constexpr int kFormatVersion = 1;

/// Writes weights, optional optimizer state and a JSON header into one file.
/// The header records `kind` and the format version.
void save(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& header,
          torch::nn::Module& module, torch::optim::Optimizer* optimizer = nullptr);

/// Reads only the JSON header, verifying kind and version.
nlohmann::json read_header(const std::filesystem::path& path, const std::string& kind);

/// Loads weights (and optimizer state when given) into already-built objects.
void load_weights(const std::filesystem::path& path, torch::nn::Module& module,
                  torch::optim::Optimizer* optimizer = nullptr);

}  // namespace shadowsteer::checkpoint
