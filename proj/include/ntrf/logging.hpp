#pragma once

#include <spdlog/spdlog.h>

namespace ntrf {

// Configures the default logger from NTRF_LOG (trace|debug|info|warn|error|off).
// Output goes to stderr so stdout stays clean for command results.
void init_logging();

}  // namespace ntrf
