#pragma once

#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace truenet {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3 };

LogLevel log_level();
void set_log_level(LogLevel lvl);
// Accepts "debug", "info", "warn", "error"; anything else keeps the default.
void set_log_level(const std::string& name);
// Reads TRUENET_LOG if set.
void init_log_level_from_env();

void log_line(LogLevel lvl, const std::string& msg);

inline void log_debug(const std::string& msg) { log_line(LogLevel::debug, msg); }
inline void log_info(const std::string& msg) { log_line(LogLevel::info, msg); }
inline void log_warn(const std::string& msg) { log_line(LogLevel::warn, msg); }
inline void log_error(const std::string& msg) { log_line(LogLevel::error, msg); }

}  // namespace truenet
