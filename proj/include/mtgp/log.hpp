#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace mtgp::log {

enum class Level { quiet = 0, warn = 1, info = 2, debug = 3 };

// Log level comes from the MTGP_LOG environment variable
// (quiet|warn|info|debug); default warn.
inline Level& level() {
    static Level lvl = [] {
        const char* env = std::getenv("MTGP_LOG");
        if (!env) return Level::warn;
        if (std::strcmp(env, "quiet") == 0) return Level::quiet;
        if (std::strcmp(env, "info") == 0) return Level::info;
        if (std::strcmp(env, "debug") == 0) return Level::debug;
        return Level::warn;
    }();
    return lvl;
}

inline void emit(Level lvl, const char* tag, const std::string& msg) {
    if (static_cast<int>(lvl) <= static_cast<int>(level())) {
        std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
    }
}

inline void warn(const std::string& msg) { emit(Level::warn, "warn", msg); }
inline void info(const std::string& msg) { emit(Level::info, "info", msg); }
inline void debug(const std::string& msg) { emit(Level::debug, "debug", msg); }

}  // namespace mtgp::log
