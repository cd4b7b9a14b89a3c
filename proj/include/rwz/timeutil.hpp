#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace rwz {

/// Wall-clock minute in corridor-local time, counted from 1970-01-01T00:00.
struct Timestamp {
    std::int64_t minutes = 0;

    friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

/// Accepts `YYYY-MM-DDTHH:MM`, optionally followed by `:SS` (must be 00);
/// a space may replace the `T`. Throws FormatError otherwise.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

/// 0 = Monday ... 6 = Sunday.
int weekday(Timestamp t);
int minute_of_day(Timestamp t);

}  // namespace rwz
