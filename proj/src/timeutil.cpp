#include "rwz/timeutil.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

#include "rwz/errors.hpp"

namespace rwz {

namespace {

int read_int(std::string_view text, std::size_t pos, std::size_t len) {
    int v = 0;
    const char* first = text.data() + pos;
    auto [ptr, ec] = std::from_chars(first, first + len, v);
    if (ec != std::errc{} || ptr != first + len) {
        throw FormatError("malformed timestamp '" + std::string(text) + "'");
    }
    return v;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
    while (!text.empty() && (text.back() == ' ' || text.back() == '\r' || text.back() == 'Z')) text.remove_suffix(1);
    while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
    if (text.size() != 16 && text.size() != 19) {
        throw FormatError("malformed timestamp '" + std::string(text) + "'");
    }
    if (text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') || text[13] != ':') {
        throw FormatError("malformed timestamp '" + std::string(text) + "'");
    }
    const int year = read_int(text, 0, 4);
    const int month = read_int(text, 5, 2);
    const int day = read_int(text, 8, 2);
    const int hour = read_int(text, 11, 2);
    const int minute = read_int(text, 14, 2);
    if (text.size() == 19) {
        if (text[16] != ':' || read_int(text, 17, 2) != 0) {
            throw FormatError("timestamp '" + std::string(text) + "' is not on a whole minute");
        }
    }
    using namespace std::chrono;
    const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                             std::chrono::day{static_cast<unsigned>(day)}};
    if (!ymd.ok() || hour > 23 || minute > 59) {
        throw FormatError("invalid calendar time '" + std::string(text) + "'");
    }
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return Timestamp{static_cast<std::int64_t>(days) * 1440 + hour * 60 + minute};
}

std::string format_timestamp(Timestamp t) {
    using namespace std::chrono;
    const std::int64_t days = floor_div(t.minutes, 1440);
    const auto mod = static_cast<int>(t.minutes - days * 1440);
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), mod / 60, mod % 60);
    return buf;
}

int weekday(Timestamp t) {
    // 1970-01-01 was a Thursday (index 3 with Monday = 0).
    const std::int64_t days = floor_div(t.minutes, 1440);
    return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

int minute_of_day(Timestamp t) { return static_cast<int>(t.minutes - floor_div(t.minutes, 1440) * 1440); }

}  // namespace rwz
