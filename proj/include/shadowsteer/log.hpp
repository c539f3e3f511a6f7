#pragma once

#include <string>
#include <string_view>

#include <fmt/format.h>

// Thin wrapper over spdlog. The backend lives in its own translation unit so the
// fmt bundled with libtorch never meets spdlog's fmt.
namespace shadowsteer::log {

void info(std::string_view message);
void warn(std::string_view message);
void error(std::string_view message);
/// trace, debug, info, warn, error, off
void set_level(std::string_view level);

template <typename... Args>
void info(fmt::format_string<Args...> f, Args&&... args) {
  info(std::string_view(fmt::format(f, std::forward<Args>(args)...)));
}
template <typename... Args>
void warn(fmt::format_string<Args...> f, Args&&... args) {
  warn(std::string_view(fmt::format(f, std::forward<Args>(args)...)));
}

}  // namespace shadowsteer::log
