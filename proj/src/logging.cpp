#include "truenet/logging.hpp"

#include <cstdlib>

namespace truenet {

namespace {
LogLevel g_level = LogLevel::info;
std::mutex g_mutex;

const char* level_tag(LogLevel lvl) {
  switch (lvl) {
    case LogLevel::debug: return "DEBUG";
    case LogLevel::info: return "INFO";
    case LogLevel::warn: return "WARN";
    case LogLevel::error: return "ERROR";
  }
  return "?";
}
}  // namespace

LogLevel log_level() { return g_level; }

void set_log_level(LogLevel lvl) { g_level = lvl; }

void set_log_level(const std::string& name) {
  if (name == "debug") g_level = LogLevel::debug;
  else if (name == "info") g_level = LogLevel::info;
  else if (name == "warn") g_level = LogLevel::warn;
  else if (name == "error") g_level = LogLevel::error;
}

void init_log_level_from_env() {
  if (const char* env = std::getenv("TRUENET_LOG")) set_log_level(std::string(env));
}

void log_line(LogLevel lvl, const std::string& msg) {
  if (static_cast<int>(lvl) < static_cast<int>(g_level)) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "[" << level_tag(lvl) << "] " << msg << "\n";
}

}  // namespace truenet
