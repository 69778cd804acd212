#include "dprof/date.hpp"

#include "dprof/error.hpp"

#include <charconv>
#include <cstdio>

namespace dprof {

Date Date::from_ymd(int year, unsigned month, unsigned day) {
    std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                    std::chrono::day{day}};
    if (!ymd.ok()) {
        throw ParseError("invalid calendar date " + std::to_string(year) + "-" +
                         std::to_string(month) + "-" + std::to_string(day));
    }
    return Date(std::chrono::sys_days{ymd});
}

Date Date::parse(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
        throw ParseError("expected YYYY-MM-DD date, got '" + std::string(text) + "'");
    }
    auto field = [&](std::size_t pos, std::size_t len) {
        int v = 0;
        auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, v);
        if (ec != std::errc{} || ptr != text.data() + pos + len) {
            throw ParseError("expected YYYY-MM-DD date, got '" + std::string(text) + "'");
        }
        return v;
    };
    return from_ymd(field(0, 4), static_cast<unsigned>(field(5, 2)),
                    static_cast<unsigned>(field(8, 2)));
}

std::chrono::year_month_day Date::ymd() const {
    return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{days_}}};
}

std::string Date::str() const {
    auto d = ymd();
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                  static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
    return buf;
}

}  // namespace dprof
