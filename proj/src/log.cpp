#include "fewshot/log.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>

namespace fewshot {

namespace {

LogLevel level_from_env() {
  const char* value = std::getenv("FSL_LOG");
  if (!value) return LogLevel::info;
  const std::string v(value);
  if (v == "error") return LogLevel::error;
  if (v == "debug") return LogLevel::debug;
  return LogLevel::info;
}

std::atomic<int>& level_storage() {
  static std::atomic<int> level{static_cast<int>(level_from_env())};
  return level;
}

std::mutex& output_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

LogLevel log_level() { return static_cast<LogLevel>(level_storage().load()); }

void set_log_level(LogLevel level) { level_storage().store(static_cast<int>(level)); }

void log_line(LogLevel level, std::string_view message) {
  static constexpr const char* names[] = {"error", "info", "debug"};
  std::lock_guard lock(output_mutex());
  std::fprintf(stderr, "[%s] %.*s\n", names[static_cast<int>(level)], static_cast<int>(message.size()),
               message.data());
}

}  // namespace fewshot
