// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "arbfree/util.hpp"

namespace arbfree {

/// Days since 1970-01-01 for a proleptic Gregorian date
/// (Howard Hinnant's days_from_civil).
inline int64_t days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<int64_t>(era) * 146097 + static_cast<int64_t>(doe) - 719468;
}

inline void civil_from_days(int64_t z, int& y, unsigned& m, unsigned& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int64_t yy = static_cast<int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = static_cast<int>(yy + (m <= 2));
}

/// 0 = Monday ... 6 = Sunday.
inline int weekday(int64_t days_since_epoch) {
    // 1970-01-01 was a Thursday (index 3).
    int64_t w = (days_since_epoch + 3) % 7;
    return static_cast<int>(w < 0 ? w + 7 : w);
}

inline std::string iso_date(int64_t days_since_epoch) {
    int y;
    unsigned m, d;
    civil_from_days(days_since_epoch, y, m, d);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", y, m, d);
    return buf;
}

inline int64_t parse_iso_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-')
        throw DataError("malformed ISO date: " + std::string(s));
    auto num = [&](size_t pos, size_t n) {
        int v = 0;
        for (size_t i = pos; i < pos + n; ++i) {
            if (s[i] < '0' || s[i] > '9')
                throw DataError("malformed ISO date: " + std::string(s));
            v = v * 10 + (s[i] - '0');
        }
        return v;
    };
    int y = num(0, 4);
    unsigned m = static_cast<unsigned>(num(5, 2));
    unsigned d = static_cast<unsigned>(num(8, 2));
    if (m < 1 || m > 12 || d < 1 || d > 31)
        throw DataError("out-of-range ISO date: " + std::string(s));
    return days_from_civil(y, m, d);
}

/// `count` consecutive weekdays starting at the first weekday >= start.
inline std::vector<std::string> business_days(std::string_view start, int count) {
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(count));
    int64_t d = parse_iso_date(start);
    while (weekday(d) > 4) ++d;
    while (static_cast<int>(out.size()) < count) {
        out.push_back(iso_date(d));
        do {
            ++d;
        } while (weekday(d) > 4);
    }
    return out;
}

}  // namespace arbfree
