#include "rego/logging.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace rego::log {
namespace {

std::atomic<Level> g_level{Level::Warning};
std::mutex g_mutex;

void emit(Level at, const char* tag, std::string_view message) {
  if (at < g_level.load(std::memory_order_relaxed)) return;
  std::lock_guard lock(g_mutex);
  std::clog << "[rego " << tag << "] " << message << '\n';
}

}  // namespace

void set_level(Level level) { g_level.store(level, std::memory_order_relaxed); }
Level level() { return g_level.load(std::memory_order_relaxed); }

void debug(std::string_view message) { emit(Level::Debug, "debug", message); }
void info(std::string_view message) { emit(Level::Info, "info", message); }
void warning(std::string_view message) { emit(Level::Warning, "warn", message); }
void error(std::string_view message) { emit(Level::Error, "error", message); }

}  // namespace rego::log
