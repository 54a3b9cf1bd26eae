#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <string>

namespace gaitstage::cli {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

class Logger {
 public:
  explicit Logger(int verbosity = 1) : verbosity_(verbosity) {}

  void error(const std::string& msg) const { emit(LogLevel::error, "ERROR", msg); }
  void warn(const std::string& msg) const { emit(LogLevel::warn, "WARN", msg); }
  void info(const std::string& msg) const { emit(LogLevel::info, "INFO", msg); }
  void debug(const std::string& msg) const { emit(LogLevel::debug, "DEBUG", msg); }

  int verbosity() const { return verbosity_; }

 private:
  void emit(LogLevel level, const char* tag, const std::string& msg) const {
    // verbosity 0: warnings and errors; 1: info; 2: debug
    if (static_cast<int>(level) > verbosity_ + 1) return;
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm);
    std::fprintf(stderr, "%s %-5s %s\n", stamp, tag, msg.c_str());
  }

  int verbosity_;
};

}  // namespace gaitstage::cli
