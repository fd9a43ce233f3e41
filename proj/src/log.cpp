#include "treesae/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace treesae::log {

namespace {

std::atomic<Level> g_level{Level::warn};
std::mutex g_mutex;

void emit(Level at, const char* tag, std::string_view msg) {
    if (at < g_level.load(std::memory_order_relaxed)) return;
    std::lock_guard<std::mutex> lock(g_mutex);
    std::fprintf(stderr, "[treesae %s] %.*s\n", tag, static_cast<int>(msg.size()), msg.data());
}

} // namespace

void set_level(Level level) { g_level.store(level, std::memory_order_relaxed); }
Level level() { return g_level.load(std::memory_order_relaxed); }

void debug(std::string_view msg) { emit(Level::debug, "debug", msg); }
void info(std::string_view msg) { emit(Level::info, "info", msg); }
void warn(std::string_view msg) { emit(Level::warn, "warn", msg); }
void error(std::string_view msg) { emit(Level::error, "error", msg); }

} // namespace treesae::log
