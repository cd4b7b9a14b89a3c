#include "rwz/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace rwz {

namespace {

std::atomic<LogLevel> g_level{LogLevel::Info};
std::mutex g_mutex;

const char* level_name(LogLevel level) {
    switch (level) {
        case LogLevel::Debug: return "debug";
        case LogLevel::Info: return "info";
        case LogLevel::Warn: return "warn";
        case LogLevel::Error: return "error";
        case LogLevel::Off: break;
    }
    return "off";
}

}  // namespace

void set_log_level(LogLevel level) { g_level.store(level); }

LogLevel log_level() { return g_level.load(); }

void log(LogLevel level, std::string_view message) {
    if (level == LogLevel::Off || level < g_level.load()) return;
    std::lock_guard lock(g_mutex);
    std::cerr << '[' << level_name(level) << "] " << message << '\n';
}

}  // namespace rwz
