#pragma once

#include <cstdint>
#include <string>

namespace layerlens {

// Exact rational on 128-bit integers. The arithmetic generator only ever
// combines up to four operands whose scaled magnitude is <= 1e9, so
// numerator and denominator stay below ~1e36 before reduction and never
// overflow the 128-bit intermediates.
struct rational {
  __int128 num = 0;
  __int128 den = 1; // > 0, gcd(|num|, den) == 1

  static rational from_int(std::int64_t v);
  // value = scaled / scale, e.g. from_scaled(7682, 1000) == 7.682
  static rational from_scaled(std::int64_t scaled, std::int64_t scale);

  rational operator+(const rational &o) const;
  rational operator-(const rational &o) const;
  rational operator*(const rational &o) const;
  // Throws resample-level domain error on zero divisor; callers decide
  // whether to resample or abort.
  rational operator/(const rational &o) const;

  bool operator==(const rational &o) const {
    return num == o.num && den == o.den;
  }
  bool operator!=(const rational &o) const { return !(*this == o); }

  bool is_zero() const { return num == 0; }
  bool is_integer() const { return den == 1; }

  // Half-away-from-zero rounding to `decimals` fractional digits,
  // returned as the scaled integer value * 10^decimals.
  __int128 round_scaled(int decimals) const;

  double to_double() const;
};

// Exact integer rendering; requires is_integer().
std::string render_integer(const rational &r);

// Decimal rendering: round half-away-from-zero to 3 decimals, trim trailing
// zeros but keep at least one fractional digit ("552.0", "7.5", "36.576").
std::string render_decimal3(const rational &r);

// Shortest round-trip representation of a double (std::to_chars).
std::string shortest_double_string(double v);

// Exact parse of a plain decimal string ("-552.0", "36.576"); inverse of
// the rendering helpers for values they emit.
rational rational_from_decimal(const std::string &text);

std::string int128_to_string(__int128 v);

} // namespace layerlens
