#pragma once

#include <filesystem>
#include <string>

namespace test_paths {

/// Fresh, empty directory under the build tree for one test.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::path(SHADOWSTEER_TEST_SCRATCH) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test_paths
