#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace propfuse::log {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

// PROPFUSE_LOG = error | info | debug; anything else means error.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("PROPFUSE_LOG");
    const std::string_view v = env ? env : "";
    if (v == "debug") return Level::kDebug;
    if (v == "info") return Level::kInfo;
    return Level::kError;
  }();
  return level;
}

inline void write(Level level, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static std::mutex mu;
  static constexpr const char* kTags[] = {"error", "info", "debug"};
  std::lock_guard lock(mu);
  std::cerr << "[propfuse " << kTags[static_cast<int>(level)] << "] " << msg << "\n";
}

inline void error(std::string_view msg) { write(Level::kError, msg); }
inline void info(std::string_view msg) { write(Level::kInfo, msg); }
inline void debug(std::string_view msg) { write(Level::kDebug, msg); }

}  // namespace propfuse::log
