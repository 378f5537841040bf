#include "ctxalign/log.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>

namespace ctxalign::log {

namespace {

Level from_env() {
  const char* v = std::getenv("CTXALIGN_LOG");
  if (!v) return Level::Warn;
  const std::string s(v);
  if (s == "error") return Level::Error;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  return Level::Warn;
}

std::optional<Level>& current() {
  static std::optional<Level> level;
  return level;
}

const char* name(Level l) {
  switch (l) {
    case Level::Error: return "error";
    case Level::Warn: return "warn";
    case Level::Info: return "info";
    case Level::Debug: return "debug";
  }
  return "?";
}

}  // namespace

Level threshold() {
  if (!current()) current() = from_env();
  return *current();
}

void set_threshold(Level level) { current() = level; }

bool enabled(Level level) { return static_cast<int>(level) <= static_cast<int>(threshold()); }

void write(Level level, std::string_view message) {
  if (!enabled(level)) return;
  std::clog << "[ctxalign " << name(level) << "] " << message << '\n';
}

}  // namespace ctxalign::log
