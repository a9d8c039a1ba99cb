#pragma once

// Small shared building blocks: calendar dates, deterministic random draws,
// number formatting and hashing.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace mastitis {

/// Calendar day. Ordered, hashable through days_since_epoch().
class Date {
public:
    constexpr Date() = default;
    constexpr explicit Date(std::chrono::sys_days d) : days_(d) {}
    constexpr Date(int y, unsigned m, unsigned d)
        : days_(std::chrono::year_month_day{std::chrono::year{y}, std::chrono::month{m},
                                            std::chrono::day{d}}) {}

    static Date parse(std::string_view iso) {
        int y = 0;
        unsigned m = 0, d = 0;
        auto bad = [&] { return std::invalid_argument("invalid ISO-8601 date '" + std::string(iso) + "'"); };
        if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') throw bad();
        auto num = [&](std::size_t from, std::size_t len, auto& out) {
            auto [p, ec] = std::from_chars(iso.data() + from, iso.data() + from + len, out);
            if (ec != std::errc{} || p != iso.data() + from + len) throw bad();
        };
        num(0, 4, y);
        num(5, 2, m);
        num(8, 2, d);
        std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
        if (!ymd.ok()) throw bad();
        return Date{std::chrono::sys_days{ymd}};
    }

    std::string iso() const {
        std::chrono::year_month_day ymd{days_};
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()),
                      unsigned(ymd.day()));
        return buf;
    }

    constexpr std::chrono::sys_days sys() const { return days_; }
    constexpr long days_since_epoch() const { return days_.time_since_epoch().count(); }
    unsigned month() const { return unsigned(std::chrono::year_month_day{days_}.month()); }
    int year() const { return int(std::chrono::year_month_day{days_}.year()); }

    constexpr Date operator+(long n) const { return Date{days_ + std::chrono::days{n}}; }
    constexpr Date operator-(long n) const { return Date{days_ - std::chrono::days{n}}; }
    constexpr long operator-(Date o) const { return (days_ - o.days_).count(); }
    constexpr auto operator<=>(const Date&) const = default;

private:
    std::chrono::sys_days days_{};
};

/// Random draws built directly on the 64-bit Mersenne engine so that generated
/// data is identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [lo, hi].
    long integer(long lo, long hi) {
        const auto span = std::uint64_t(hi - lo) + 1;
        return lo + long(engine_() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }
    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t bits() { return engine_(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw std::invalid_argument("not a number: '" + std::string(s) + "'");
    return v;
}

inline long parse_long(std::string_view s) {
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw std::invalid_argument("not an integer: '" + std::string(s) + "'");
    return v;
}

/// Removes binary noise left by k*step products (0.15000000000000002 -> 0.15).
inline double clean_decimal(double v) {
    if (v == 0.0 || !std::isfinite(v)) return v;
    const double scaled = std::round(v * 1e9) / 1e9;
    return scaled == 0.0 ? 0.0 : scaled;
}

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Median of a copy; the mean of the two middle elements for even sizes.
inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of empty sequence");
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + long(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + long(mid));
    return 0.5 * (lo + hi);
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace mastitis
