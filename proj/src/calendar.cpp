#include "dualclvsa/calendar.h"

#include <cstdio>

#include "dualclvsa/errors.h"

namespace dualclvsa {

// Howard Hinnant's civil-calendar conversions.
std::int64_t days_from_civil(CivilDate date) {
    const std::int64_t y = static_cast<std::int64_t>(date.year) - (date.month <= 2 ? 1 : 0);
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const std::int64_t yoe = y - era * 400;
    const std::int64_t mp = (date.month + 9) % 12;
    const std::int64_t doy = (153 * mp + 2) / 5 + date.day - 1;
    const std::int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

CivilDate civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const std::int64_t doe = z - era * 146097;
    const std::int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const std::int64_t mp = (5 * doy + 2) / 153;
    const auto d = static_cast<unsigned>(doy - (153 * mp + 2) / 5 + 1);
    const auto m = static_cast<unsigned>(mp < 10 ? mp + 3 : mp - 9);
    const std::int64_t y = yoe + era * 400 + (m <= 2 ? 1 : 0);
    return {static_cast<int>(y), m, d};
}

Timestamp parse_iso8601(std::string_view text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    const std::string buf(text);
    int consumed = 0;
    int fields = std::sscanf(buf.c_str(), "%d-%d-%d%n", &y, &mo, &d, &consumed);
    if (fields != 3) throw DataError("invalid timestamp '" + buf + "'");
    if (static_cast<std::size_t>(consumed) < buf.size()) {
        const char sep = buf[static_cast<std::size_t>(consumed)];
        if (sep != 'T' && sep != ' ') throw DataError("invalid timestamp '" + buf + "'");
        int rest = 0;
        fields = std::sscanf(buf.c_str() + consumed + 1, "%d:%d:%d%n", &h, &mi, &s, &rest);
        if (fields != 3) throw DataError("invalid timestamp '" + buf + "'");
        const std::size_t tail = static_cast<std::size_t>(consumed + 1 + rest);
        if (tail < buf.size() && !(buf.substr(tail) == "Z" || buf.substr(tail) == "+00:00")) {
            throw DataError("timestamp '" + buf + "' is not UTC");
        }
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 ||
        s > 60) {
        throw DataError("timestamp out of range '" + buf + "'");
    }
    const std::int64_t days =
        days_from_civil({y, static_cast<unsigned>(mo), static_cast<unsigned>(d)});
    return days * kSecondsPerDay + h * 3600 + mi * 60 + s;
}

std::string format_iso8601(Timestamp ts) {
    const std::int64_t days = day_number(ts);
    const CivilDate c = civil_from_days(days);
    const Timestamp sod = ts - days * kSecondsPerDay;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", c.year, c.month, c.day,
                  static_cast<int>(sod / 3600), static_cast<int>(sod / 60 % 60),
                  static_cast<int>(sod % 60));
    return buf;
}

std::int64_t month_index(Timestamp ts) {
    const CivilDate c = civil_from_days(day_number(ts));
    return (static_cast<std::int64_t>(c.year) - 1970) * 12 + (c.month - 1);
}

Timestamp month_start(std::int64_t index) {
    const std::int64_t y = 1970 + (index >= 0 ? index / 12 : (index - 11) / 12);
    const auto m = static_cast<unsigned>(index - (y - 1970) * 12 + 1);
    return days_from_civil({static_cast<int>(y), m, 1}) * kSecondsPerDay;
}

std::string month_label(std::int64_t index) {
    const CivilDate c = civil_from_days(day_number(month_start(index)));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u", c.year, c.month);
    return buf;
}

int weekday(std::int64_t day_number) {
    // 1970-01-01 was a Thursday.
    const std::int64_t w = (day_number + 3) % 7;
    return static_cast<int>(w < 0 ? w + 7 : w);
}

}  // namespace dualclvsa
