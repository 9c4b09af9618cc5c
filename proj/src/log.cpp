#include "flora/log.hpp"

#include <cstdlib>
#include <string_view>

#include <spdlog/sinks/stdout_sinks.h>

namespace flora {

void configure_logging() {
    static bool done = false;
    if (!done) {
        auto logger = spdlog::stderr_logger_mt("flora");
        logger->set_pattern("[%l] %v");
        spdlog::set_default_logger(logger);
        done = true;
    }
    spdlog::level::level_enum level = spdlog::level::info;
    if (const char* env = std::getenv("FLORA_LOG")) {
        const std::string_view v(env);
        if (v == "error") level = spdlog::level::err;
        else if (v == "debug") level = spdlog::level::debug;
        else if (v == "warn") level = spdlog::level::warn;
    }
    spdlog::set_level(level);
}

}  // namespace flora
