#pragma once

#include <atomic>
#include <cstdarg>
#include <cstdio>
#include <mutex>
#include <string>

namespace frinet::core {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

/// Process-wide logger. Warnings are counted so callers (and tests) can
/// observe fallback paths without scraping stderr.
class Logger {
 public:
  static Logger& instance() {
    static Logger logger;
    return logger;
  }

  void set_level(LogLevel level) { level_ = level; }
  LogLevel level() const { return level_; }

  void log(LogLevel level, const std::string& message) {
    if (level == LogLevel::kWarn) ++warn_count_;
    if (static_cast<int>(level) < static_cast<int>(level_.load())) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::lock_guard<std::mutex> lock(mutex_);
    std::fprintf(stderr, "[frinet:%s] %s\n", names[static_cast<int>(level)],
                 message.c_str());
  }

  long warn_count() const { return warn_count_.load(); }

 private:
  Logger() = default;
  std::atomic<LogLevel> level_{LogLevel::kInfo};
  std::atomic<long> warn_count_{0};
  std::mutex mutex_;
};

/// snprintf-style formatting into a std::string.
inline std::string strfmt(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  va_end(args);
  return out;
}

inline void log_debug(const std::string& m) { Logger::instance().log(LogLevel::kDebug, m); }
inline void log_info(const std::string& m) { Logger::instance().log(LogLevel::kInfo, m); }
inline void log_warn(const std::string& m) { Logger::instance().log(LogLevel::kWarn, m); }
inline void log_error(const std::string& m) { Logger::instance().log(LogLevel::kError, m); }

}  // namespace frinet::core
