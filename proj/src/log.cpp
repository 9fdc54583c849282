#include "emts/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace emts::log {

namespace {

Level from_env() {
  const char* env = std::getenv("EMTS_LOG");
  if (env == nullptr) return Level::Warn;
  const std::string v(env);
  if (v == "error") return Level::Error;
  if (v == "info") return Level::Info;
  if (v == "debug") return Level::Debug;
  return Level::Warn;
}

std::atomic<int>& current() {
  static std::atomic<int> lvl{static_cast<int>(from_env())};
  return lvl;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Level level() { return static_cast<Level>(current().load(std::memory_order_relaxed)); }

void set_level(Level lvl) { current().store(static_cast<int>(lvl), std::memory_order_relaxed); }

void write(Level lvl, std::string_view msg) {
  static constexpr const char* kTags[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(sink_mutex());
  std::cerr << "[emts " << kTags[static_cast<int>(lvl)] << "] " << msg << '\n';
}

}  // namespace emts::log
