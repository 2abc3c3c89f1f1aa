#pragma once

#include <compare>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <string>

#include "ace/errors.hpp"

namespace ace {

/// Exact rational number over int64 with __int128 intermediates.
///
/// Pass rates, combined scores, and histogram proportions are specified as
/// exact rationals; counts in this pipeline are small (test counts, sample
/// counts), so int64 numerators/denominators never come close to overflow,
/// but every operation still checks.
class Rational {
public:
    constexpr Rational() = default;
    Rational(long long n) : num_(n), den_(1) {}  // NOLINT: implicit by design
    Rational(long long n, long long d) : num_(n), den_(d) { normalize(); }

    long long num() const { return num_; }
    long long den() const { return den_; }

    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

    friend Rational operator+(const Rational& a, const Rational& b) {
        return make(i128(a.num_) * b.den_ + i128(b.num_) * a.den_, i128(a.den_) * b.den_);
    }
    friend Rational operator-(const Rational& a, const Rational& b) {
        return make(i128(a.num_) * b.den_ - i128(b.num_) * a.den_, i128(a.den_) * b.den_);
    }
    friend Rational operator*(const Rational& a, const Rational& b) {
        return make(i128(a.num_) * b.num_, i128(a.den_) * b.den_);
    }
    friend Rational operator/(const Rational& a, const Rational& b) {
        if (b.num_ == 0) throw DomainError("rational division by zero");
        return make(i128(a.num_) * b.den_, i128(a.den_) * b.num_);
    }
    Rational operator-() const { return Rational(-num_, den_); }

    friend bool operator==(const Rational& a, const Rational& b) {
        return a.num_ == b.num_ && a.den_ == b.den_;
    }
    friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
        i128 lhs = i128(a.num_) * b.den_;
        i128 rhs = i128(b.num_) * a.den_;
        if (lhs < rhs) return std::strong_ordering::less;
        if (lhs > rhs) return std::strong_ordering::greater;
        return std::strong_ordering::equal;
    }

    /// "3/4", or "3" when the denominator is 1.
    std::string to_string() const {
        std::string s = std::to_string(num_);
        if (den_ != 1) s += "/" + std::to_string(den_);
        return s;
    }

    /// Finite decimal ("0.125") when the reduced denominator is 2^a*5^b,
    /// otherwise the fraction form.
    std::string to_decimal_string() const {
        long long d = den_;
        int twos = 0, fives = 0;
        while (d % 2 == 0) { d /= 2; ++twos; }
        while (d % 5 == 0) { d /= 5; ++fives; }
        if (d != 1) return to_string();
        int digits = twos > fives ? twos : fives;
        i128 scaled = i128(num_ < 0 ? -num_ : num_);
        for (int i = 0; i < digits; ++i) scaled *= 10;
        scaled /= den_;
        std::string body = i128_to_string(scaled);
        if (digits == 0) return (num_ < 0 ? "-" : "") + body;
        while (static_cast<int>(body.size()) <= digits) body.insert(body.begin(), '0');
        body.insert(body.end() - digits, '.');
        // strip trailing zeros in the fractional part, keep at least one digit
        while (body.back() == '0' && body[body.size() - 2] != '.') body.pop_back();
        return (num_ < 0 ? "-" : "") + body;
    }

    /// Accepts "3/4", "3", "0.75", "-1.5".
    static Rational parse(const std::string& text) {
        if (text.empty()) throw ParseError("empty rational literal");
        auto slash = text.find('/');
        if (slash != std::string::npos) {
            return Rational(parse_ll(text.substr(0, slash)), parse_ll(text.substr(slash + 1)));
        }
        auto dot = text.find('.');
        if (dot == std::string::npos) return Rational(parse_ll(text), 1);
        std::string head = text.substr(0, dot);
        std::string frac = text.substr(dot + 1);
        if (frac.size() > 18) frac.resize(18);
        bool neg = !head.empty() && head[0] == '-';
        long long whole = head.empty() || head == "-" ? 0 : parse_ll(head);
        long long den = 1;
        for (size_t i = 0; i < frac.size(); ++i) den *= 10;
        long long frac_num = frac.empty() ? 0 : parse_ll(frac);
        if (frac_num < 0) throw ParseError("malformed rational literal: " + text);
        i128 num = i128(whole < 0 ? -whole : whole) * den + frac_num;
        if (neg || whole < 0) num = -num;
        return make(num, den);
    }

private:
    using i128 = __int128;

    static std::string i128_to_string(i128 v) {
        if (v == 0) return "0";
        bool neg = v < 0;
        if (neg) v = -v;
        std::string out;
        while (v > 0) { out.insert(out.begin(), static_cast<char>('0' + int(v % 10))); v /= 10; }
        if (neg) out.insert(out.begin(), '-');
        return out;
    }

    static long long parse_ll(const std::string& s) {
        if (s.empty()) throw ParseError("malformed rational literal");
        char* end = nullptr;
        errno = 0;
        long long v = std::strtoll(s.c_str(), &end, 10);
        if (errno != 0 || end != s.c_str() + s.size()) {
            throw ParseError("malformed rational literal: " + s);
        }
        return v;
    }

    static i128 gcd128(i128 a, i128 b) {
        if (a < 0) a = -a;
        if (b < 0) b = -b;
        while (b != 0) { i128 t = a % b; a = b; b = t; }
        return a;
    }

    static Rational make(i128 n, i128 d) {
        if (d == 0) throw DomainError("rational with zero denominator");
        if (d < 0) { n = -n; d = -d; }
        i128 g = gcd128(n, d);
        if (g > 1) { n /= g; d /= g; }
        constexpr i128 lo = INT64_MIN, hi = INT64_MAX;
        if (n < lo || n > hi || d > hi) throw DomainError("rational overflow");
        Rational r;
        r.num_ = static_cast<long long>(n);
        r.den_ = static_cast<long long>(d);
        return r;
    }

    void normalize() { *this = make(num_, den_); }

    long long num_ = 0;
    long long den_ = 1;
};

}  // namespace ace
