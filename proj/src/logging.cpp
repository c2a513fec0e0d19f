#include "ntrf/logging.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace ntrf {

void init_logging() {
  auto logger = spdlog::stderr_color_mt("ntrf");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("NTRF_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

}  // namespace ntrf
