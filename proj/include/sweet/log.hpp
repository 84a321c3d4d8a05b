#pragma once

#include <cstdarg>
#include <cstdio>

namespace sweet::log {

enum Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

inline Level& threshold() {
  static Level level = kWarn;
  return level;
}

inline void vlogf(Level level, const char* tag, const char* fmt, va_list ap) {
  if (level < threshold()) return;
  std::fprintf(stderr, "[sweet %s] ", tag);
  std::vfprintf(stderr, fmt, ap);
  std::fputc('\n', stderr);
}

#define SWEET_LOG_FN(name, level, tag)                    \
  inline void name(const char* fmt, ...) {                \
    va_list ap;                                           \
    va_start(ap, fmt);                                    \
    vlogf(level, tag, fmt, ap);                           \
    va_end(ap);                                           \
  }

SWEET_LOG_FN(debugf, kDebug, "debug")
SWEET_LOG_FN(infof, kInfo, "info")
SWEET_LOG_FN(warnf, kWarn, "warn")
SWEET_LOG_FN(errorf, kError, "error")

#undef SWEET_LOG_FN

}  // namespace sweet::log
