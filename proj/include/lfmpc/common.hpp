#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lfmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error hierarchy mirrors the CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(int code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  int exit_code() const { return code_; }

 private:
  int code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(1, msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(2, msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(3, msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(4, msg) {}
};

// ---------------------------------------------------------------------------
// Time conventions. Internal time is hours since 1969-12-29 00:00, which was a
// Monday, so weekday(t) = 0 means Monday. All series run on a fixed grid
// (15 min = 0.25 h by default) and grid phases are exact in double precision.

constexpr double kStepHours = 0.25;   // 15 min
constexpr int kStepsPerDay = 96;
constexpr int kEpochCivilOffsetDays = -3;  // 1969-12-29 relative to 1970-01-01

inline long day_index(double t_hours) {
  return static_cast<long>(std::floor(t_hours / 24.0));
}

// 0 = Monday ... 6 = Sunday.
inline int weekday(double t_hours) {
  long d = day_index(t_hours) % 7;
  if (d < 0) d += 7;
  return static_cast<int>(d);
}

inline bool is_weekend(double t_hours) { return weekday(t_hours) >= 5; }

// Hours past midnight, in [0, 24).
inline double day_phase(double t_hours) {
  return t_hours - 24.0 * static_cast<double>(day_index(t_hours));
}

// Number of days with the given weekday strictly before day d (d >= 0).
inline long occurrences_before(int wd, long d) {
  long full = d / 7;
  long rem = d % 7;
  return full + (wd < rem ? 1 : 0);
}

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
inline long days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

inline void civil_from_days(long z, int& y, int& m, int& d) {
  z += 719468;
  const long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long yy = static_cast<long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
  y = static_cast<int>(yy + (m <= 2));
}

// Parses "YYYY-MM-DD[ T]HH:MM[:SS][Z]" to internal hours. Throws DataError.
inline double parse_timestamp(const std::string& s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  char sep = 0;
  int n = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &sec);
  if (n < 6 || (sep != 'T' && sep != ' '))
    throw DataError("unparseable timestamp '" + s + "'");
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 ||
      sec < 0 || sec > 59)
    throw DataError("timestamp out of range '" + s + "'");
  long days = days_from_civil(y, mo, d) - kEpochCivilOffsetDays;
  return 24.0 * static_cast<double>(days) + h + mi / 60.0 + sec / 3600.0;
}

inline std::string format_timestamp(double t_hours) {
  long day = day_index(t_hours);
  double phase = t_hours - 24.0 * static_cast<double>(day);
  long sec_total = std::lround(phase * 3600.0);
  if (sec_total >= 86400) {  // guard against rounding over midnight
    sec_total -= 86400;
    ++day;
  }
  int y, m, d;
  civil_from_days(day + kEpochCivilOffsetDays, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02ld:%02ld:%02ld", y, m, d,
                sec_total / 3600, (sec_total / 60) % 60, sec_total % 60);
  return buf;
}

// ---------------------------------------------------------------------------
// Deterministic seeded RNG. Named sub-streams keep independent draws
// reproducible regardless of the order components consume them.

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::mt19937_64 substream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = fnv1a64(name);
  h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return std::mt19937_64(h);
}

// ---------------------------------------------------------------------------
// Logging: LFMPC_LOG=quiet|info|debug (default info), to stderr.

inline int log_level() {
  static int level = [] {
    const char* v = std::getenv("LFMPC_LOG");
    if (!v) return 1;
    std::string s(v);
    if (s == "quiet") return 0;
    if (s == "debug") return 2;
    return 1;
  }();
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= 1) std::fprintf(stderr, "[lfmpc] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::fprintf(stderr, "[lfmpc:debug] %s\n", msg.c_str());
}

}  // namespace lfmpc
