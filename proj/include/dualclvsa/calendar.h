#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace dualclvsa {

// UTC epoch seconds.
using Timestamp = std::int64_t;

inline constexpr Timestamp kSecondsPerDay = 86400;

struct CivilDate {
    int year = 1970;
    unsigned month = 1;  // 1..12
    unsigned day = 1;    // 1..31
};

std::int64_t days_from_civil(CivilDate date);
CivilDate civil_from_days(std::int64_t days);

// Accepts "YYYY-MM-DDTHH:MM:SSZ", "YYYY-MM-DD HH:MM:SS" and "YYYY-MM-DD".
Timestamp parse_iso8601(std::string_view text);
std::string format_iso8601(Timestamp ts);

inline std::int64_t day_number(Timestamp ts) {
    return ts >= 0 ? ts / kSecondsPerDay : (ts - kSecondsPerDay + 1) / kSecondsPerDay;
}
inline Timestamp seconds_of_day(Timestamp ts) { return ts - day_number(ts) * kSecondsPerDay; }
inline int hour_of_day(Timestamp ts) { return static_cast<int>(seconds_of_day(ts) / 3600); }

// Months since 1970-01, so consecutive calendar months are consecutive integers.
std::int64_t month_index(Timestamp ts);
Timestamp month_start(std::int64_t month_index);
std::string month_label(std::int64_t month_index);  // "YYYY-MM"

// 0 = Monday .. 6 = Sunday.
int weekday(std::int64_t day_number);

}  // namespace dualclvsa
