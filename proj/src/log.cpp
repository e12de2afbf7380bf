#include "ifl/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace ifl::log {

namespace {

Level parse_level() {
  const char* env = std::getenv("IFL_LOG");
  if (env == nullptr) return Level::Info;
  const std::string value(env);
  if (value == "debug") return Level::Debug;
  if (value == "info") return Level::Info;
  if (value == "warn") return Level::Warn;
  if (value == "error") return Level::Error;
  return Level::Info;
}

const char* tag(Level level) {
  switch (level) {
    case Level::Debug:
      return "debug";
    case Level::Info:
      return "info";
    case Level::Warn:
      return "warn";
    case Level::Error:
      return "error";
  }
  return "info";
}

std::mutex& emit_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Level threshold() {
  static const Level level = parse_level();
  return level;
}

void emit(Level level, const std::string& message) {
  if (static_cast<int>(level) < static_cast<int>(threshold())) return;
  std::lock_guard<std::mutex> lock(emit_mutex());
  std::cerr << "[" << tag(level) << "] " << message << "\n";
}

}  // namespace ifl::log
