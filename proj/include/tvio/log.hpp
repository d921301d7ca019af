#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace tvio::log {

enum class Level : int { error = 0, warn = 1, info = 2, debug = 3 };

// Threshold comes from VIO_LOG_LEVEL (error|warn|info|debug), read once.
inline Level threshold() {
  static const Level lvl = [] {
    const char* env = std::getenv("VIO_LOG_LEVEL");
    if (env == nullptr) return Level::warn;
    if (std::strcmp(env, "error") == 0) return Level::error;
    if (std::strcmp(env, "info") == 0) return Level::info;
    if (std::strcmp(env, "debug") == 0) return Level::debug;
    return Level::warn;
  }();
  return lvl;
}

inline void emit(Level lvl, const std::string& msg) {
  static const char* tags[] = {"error", "warn", "info", "debug"};
  if (static_cast<int>(lvl) <= static_cast<int>(threshold())) {
    std::fprintf(stderr, "[tvio %s] %s\n", tags[static_cast<int>(lvl)], msg.c_str());
  }
}

inline void error(const std::string& m) { emit(Level::error, m); }
inline void warn(const std::string& m) { emit(Level::warn, m); }
inline void info(const std::string& m) { emit(Level::info, m); }
inline void debug(const std::string& m) { emit(Level::debug, m); }

}  // namespace tvio::log
