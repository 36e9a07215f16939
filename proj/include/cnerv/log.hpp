#pragma once

#include <iostream>
#include <mutex>
#include <set>
#include <string>

namespace cnerv {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kQuiet = 3 };

inline LogLevel& log_level() {
  static LogLevel level = LogLevel::kInfo;
  return level;
}

inline void log(LogLevel level, const std::string& message) {
  if (level < log_level()) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::clog << "[cnerv] " << message << '\n';
}

inline void log_info(const std::string& message) { log(LogLevel::kInfo, message); }
inline void log_warn(const std::string& message) { log(LogLevel::kWarn, message); }

/// Emits each distinct message at most once per process.
inline void log_once(const std::string& message, LogLevel level = LogLevel::kInfo) {
  static std::mutex mu;
  static std::set<std::string> seen;
  {
    std::lock_guard lock(mu);
    if (!seen.insert(message).second) return;
  }
  log(level, message);
}

}  // namespace cnerv
