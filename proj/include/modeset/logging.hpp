#pragma once
// Minimal stderr logging gated by the LOG_LEVEL environment variable
// (error, info, debug). Reports never go through here, so log output can
// carry timestamps without breaking byte-identical artifacts.

#include <cstdlib>
#include <ctime>
#include <iostream>
#include <string>

namespace modeset {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
  const char* env = std::getenv("LOG_LEVEL");
  if (!env) return LogLevel::Info;
  std::string v(env);
  if (v == "error") return LogLevel::Error;
  if (v == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

inline void log_at(LogLevel level, const std::string& tag, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  char stamp[32];
  std::time_t now = std::time(nullptr);
  std::strftime(stamp, sizeof(stamp), "%H:%M:%S", std::localtime(&now));
  std::cerr << stamp << " [" << tag << "] " << msg << std::endl;
}

inline void log_error(const std::string& msg) { log_at(LogLevel::Error, "error", msg); }
inline void log_info(const std::string& msg) { log_at(LogLevel::Info, "info", msg); }
inline void log_debug(const std::string& msg) { log_at(LogLevel::Debug, "debug", msg); }

}  // namespace modeset
