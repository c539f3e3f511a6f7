#include <spdlog/spdlog.h>

#include <string>
#include <string_view>

namespace shadowsteer::log {

void info(std::string_view message) { spdlog::info("{}", message); }
void warn(std::string_view message) { spdlog::warn("{}", message); }
void error(std::string_view message) { spdlog::error("{}", message); }

void set_level(std::string_view level) { spdlog::set_level(spdlog::level::from_str(std::string(level))); }

}  // namespace shadowsteer::log
