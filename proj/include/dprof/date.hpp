#pragma once

#include <chrono>
#include <compare>
#include <string>
#include <string_view>

namespace dprof {

// Calendar day, stored as days since 1970-01-01.
class Date {
public:
    constexpr Date() = default;
    explicit constexpr Date(std::chrono::sys_days d) : days_(d.time_since_epoch().count()) {}

    static Date from_ymd(int year, unsigned month, unsigned day);
    static constexpr Date from_days(long days) {
        Date d;
        d.days_ = days;
        return d;
    }
    // Strict ISO-8601 "YYYY-MM-DD"; throws ParseError.
    static Date parse(std::string_view text);

    constexpr long days() const { return days_; }
    std::chrono::year_month_day ymd() const;
    std::string str() const;

    constexpr Date operator+(long n) const { return from_days(days_ + n); }
    constexpr Date operator-(long n) const { return from_days(days_ - n); }
    constexpr long operator-(Date other) const { return days_ - other.days_; }

    constexpr auto operator<=>(const Date&) const = default;

private:
    long days_ = 0;
};

}  // namespace dprof
