#include "shadowsteer/checkpoint.hpp"

#include <fmt/format.h>

#include "shadowsteer/errors.hpp"

namespace fs = std::filesystem;

namespace shadowsteer::checkpoint {

void save(const fs::path& path, const std::string& kind, const nlohmann::json& header, torch::nn::Module& module,
          torch::optim::Optimizer* optimizer) {
  nlohmann::json full = header;
  full["kind"] = kind;
  full["format_version"] = kFormatVersion;

  torch::serialize::OutputArchive archive;
  archive.write("header", c10::IValue(full.dump()));
  torch::serialize::OutputArchive weights;
  module.save(weights);
  archive.write("weights", weights);
  if (optimizer) {
    torch::serialize::OutputArchive state;
    optimizer->save(state);
    archive.write("optimizer", state);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  // Write then rename so readers never see a partial checkpoint.
  const fs::path tmp = path.string() + ".tmp";
  archive.save_to(tmp.string());
  fs::rename(tmp, path);
}

namespace {

torch::serialize::InputArchive open(const fs::path& path) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  return archive;
}

}  // namespace

nlohmann::json read_header(const fs::path& path, const std::string& kind) {
  auto archive = open(path);
  c10::IValue value;
  if (!archive.try_read("header", value) || !value.isString()) {
    throw CheckpointError(path.string() + " has no checkpoint header");
  }
  auto header = nlohmann::json::parse(value.toStringRef());
  if (header.value("kind", "") != kind) {
    throw CheckpointError(fmt::format("{} holds a '{}' checkpoint, expected '{}'", path.string(),
                                      header.value("kind", "?"), kind));
  }
  if (header.value("format_version", -1) != kFormatVersion) {
    throw CheckpointError(fmt::format("{} has format version {}, this build reads version {}", path.string(),
                                      header.value("format_version", -1), kFormatVersion));
  }
  return header;
}

void load_weights(const fs::path& path, torch::nn::Module& module, torch::optim::Optimizer* optimizer) {
  auto archive = open(path);
  try {
    torch::serialize::InputArchive weights;
    archive.read("weights", weights);
    module.load(weights);
    if (optimizer) {
      torch::serialize::InputArchive state;
      archive.read("optimizer", state);
      optimizer->load(state);
    }
  } catch (const c10::Error& e) {
    throw CheckpointError("checkpoint " + path.string() + " does not match the model: " + e.what_without_backtrace());
  }
}

}  // namespace shadowsteer::checkpoint
