#pragma once

#include <spdlog/spdlog.h>

namespace flora {

/// Routes logging to stderr at the level named by FLORA_LOG (error, info, debug; default info).
void configure_logging();

}  // namespace flora
