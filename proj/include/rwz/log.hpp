#pragma once

#include <string_view>

namespace rwz {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

/// Messages below the threshold are dropped. Default: Info.
void set_log_level(LogLevel level);
LogLevel log_level();
/// Writes `[level] message` to stderr.
void log(LogLevel level, std::string_view message);

}  // namespace rwz
