#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "mqsim/types.hpp"

namespace mqsim {

// Exact arithmetic for the analytic bounds. Floor/ceil/mod on floating point
// would misplace boundary cases such as (N * delta) mod C == 0.
using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

inline Rational rat(std::int64_t v) { return Rational(v); }
inline Rational rat(std::int64_t num, std::int64_t den) { return Rational(BigInt(num), BigInt(den)); }

inline BigInt floor_int(const Rational& x) {
  const BigInt& n = boost::multiprecision::numerator(x);
  const BigInt& d = boost::multiprecision::denominator(x);  // always > 0
  BigInt q = n / d;  // truncates toward zero
  if (n < 0 && q * d != n) --q;
  return q;
}

inline BigInt ceil_int(const Rational& x) {
  BigInt f = floor_int(x);
  return Rational(f) == x ? f : f + 1;
}

inline Rational floor(const Rational& x) { return Rational(floor_int(x)); }
inline Rational ceil(const Rational& x) { return Rational(ceil_int(x)); }

// x mod y := x - floor(x / y) * y. Result lies in [0, y) for y > 0.
inline Rational mod(const Rational& x, const Rational& y) { return x - floor(x / y) * y; }

inline bool is_integer(const Rational& x) { return boost::multiprecision::denominator(x) == 1; }

inline Rational min(const Rational& a, const Rational& b) { return a < b ? a : b; }
inline Rational max(const Rational& a, const Rational& b) { return a < b ? b : a; }

// Exact integer value; throws if x is not integral or does not fit.
inline std::int64_t to_int64(const Rational& x) {
  if (!is_integer(x)) {
    throw SimError(ErrorCode::ValidationError, "value " + x.str() + " is not integral");
  }
  return boost::multiprecision::numerator(x).convert_to<std::int64_t>();
}

inline double to_double(const Rational& x) { return x.convert_to<double>(); }

// "48", "97/2"
inline std::string to_string(const Rational& x) { return x.str(); }

// Decimal rendering, exact when the denominator divides 10^digits.
inline std::string to_decimal(const Rational& x, int digits = 3) {
  BigInt scale = 1;
  for (int i = 0; i < digits; ++i) scale *= 10;
  Rational scaled = x * Rational(scale);
  BigInt q = floor_int(scaled + Rational(BigInt(1), BigInt(2)));
  bool neg = q < 0;
  if (neg) q = -q;
  BigInt whole = q / scale;
  BigInt frac = q % scale;
  std::string out = (neg ? "-" : "") + whole.str();
  if (frac != 0) {
    std::string f = frac.str();
    f.insert(0, static_cast<std::size_t>(digits) - f.size(), '0');
    while (!f.empty() && f.back() == '0') f.pop_back();
    out += "." + f;
  }
  return out;
}

// Parses "79.8", "-3", "5/2", "1e3" is rejected. Returns nullopt on malformed text.
inline std::optional<Rational> parse_rational(std::string_view text) {
  if (text.empty()) return std::nullopt;
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    auto num = parse_rational(text.substr(0, slash));
    auto den = parse_rational(text.substr(slash + 1));
    if (!num || !den || *den == 0) return std::nullopt;
    return *num / *den;
  }
  bool neg = false;
  std::size_t i = 0;
  if (text[0] == '-' || text[0] == '+') {
    neg = text[0] == '-';
    ++i;
  }
  BigInt digits = 0;
  BigInt scale = 1;
  bool seen_digit = false;
  bool seen_point = false;
  for (; i < text.size(); ++i) {
    char c = text[i];
    if (c == '.') {
      if (seen_point) return std::nullopt;
      seen_point = true;
    } else if (c >= '0' && c <= '9') {
      digits = digits * 10 + (c - '0');
      if (seen_point) scale *= 10;
      seen_digit = true;
    } else {
      return std::nullopt;
    }
  }
  if (!seen_digit) return std::nullopt;
  Rational r(digits, scale);
  return neg ? Rational(-r) : r;
}

}  // namespace mqsim
