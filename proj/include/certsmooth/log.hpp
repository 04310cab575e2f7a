#pragma once

// Line-oriented key=value logging to stderr: `event=<name> k1=v1 k2=v2`.
// Values containing spaces, quotes or '=' are double-quoted.

#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>

namespace certsmooth {

enum class LogLevel { kDebug, kInfo, kWarn, kError, kQuiet };

void set_log_level(LogLevel level);
void log_event(LogLevel level, std::string_view event,
               std::initializer_list<std::pair<std::string_view, std::string>> fields = {});

}  // namespace certsmooth
