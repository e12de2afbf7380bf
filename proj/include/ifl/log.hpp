#pragma once

#include <string>

namespace ifl::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

// Threshold comes from the IFL_LOG environment variable
// (debug|info|warn|error), default info. Messages go to stderr.
Level threshold();

void emit(Level level, const std::string& message);

inline void debug(const std::string& m) { emit(Level::Debug, m); }
inline void info(const std::string& m) { emit(Level::Info, m); }
inline void warn(const std::string& m) { emit(Level::Warn, m); }
inline void error(const std::string& m) { emit(Level::Error, m); }

}  // namespace ifl::log
