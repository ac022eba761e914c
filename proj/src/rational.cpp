#include "layerlens/rational.hpp"

#include "layerlens/errors.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>

namespace layerlens {

namespace {

__int128 iabs(__int128 v) { return v < 0 ? -v : v; }

__int128 gcd128(__int128 a, __int128 b) {
  a = iabs(a);
  b = iabs(b);
  while (b != 0) {
    __int128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

rational reduced(__int128 num, __int128 den) {
  if (den == 0)
    throw numeric_error("rational: zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const __int128 g = gcd128(num, den); // > 0 because den != 0
  rational r;
  r.num = num / g;
  r.den = den / g;
  return r;
}

} // namespace

rational rational::from_int(std::int64_t v) {
  rational r;
  r.num = v;
  r.den = 1;
  return r;
}

rational rational::from_scaled(std::int64_t scaled, std::int64_t scale) {
  return reduced(scaled, scale);
}

// Sums and products use the gcd/lcm forms so cross terms stay bounded by
// |value| * lcm(dens); the straightforward num1*den2 form can exceed 128
// bits for the largest six-digit multiplication chains.
rational rational::operator+(const rational &o) const {
  const __int128 g = gcd128(den, o.den);
  const __int128 right = o.den / g;
  return reduced(num * right + o.num * (den / g), den * right);
}

rational rational::operator-(const rational &o) const {
  const __int128 g = gcd128(den, o.den);
  const __int128 right = o.den / g;
  return reduced(num * right - o.num * (den / g), den * right);
}

rational rational::operator*(const rational &o) const {
  const __int128 g1 = gcd128(num, o.den);
  const __int128 g2 = gcd128(o.num, den);
  return reduced((num / g1) * (o.num / g2), (den / g2) * (o.den / g1));
}

rational rational::operator/(const rational &o) const {
  if (o.num == 0)
    throw numeric_error("rational: division by zero");
  const __int128 g1 = gcd128(num, o.num);
  const __int128 g2 = gcd128(o.den, den);
  return reduced((num / g1) * (o.den / g2), (den / g2) * (o.num / g1));
}

__int128 rational::round_scaled(int decimals) const {
  __int128 scale = 1;
  for (int i = 0; i < decimals; ++i)
    scale *= 10;
  // Split into whole and fractional parts first; num*scale alone can
  // overflow for the largest exactly-representable products.
  const __int128 whole = num / den;
  const __int128 rem = num % den; // same sign as num, |rem| < den
  __int128 q = whole * scale + (rem * scale) / den;
  const __int128 tail = iabs((rem * scale) % den);
  if (2 * tail >= den)
    q += (num < 0 ? -1 : 1);
  return q;
}

double rational::to_double() const {
  return static_cast<double>(num) / static_cast<double>(den);
}

std::string int128_to_string(__int128 v) {
  if (v == 0)
    return "0";
  const bool neg = v < 0;
  unsigned __int128 u = neg ? static_cast<unsigned __int128>(-v)
                            : static_cast<unsigned __int128>(v);
  std::string digits;
  while (u != 0) {
    digits.push_back(static_cast<char>('0' + static_cast<int>(u % 10)));
    u /= 10;
  }
  if (neg)
    digits.push_back('-');
  return std::string(digits.rbegin(), digits.rend());
}

std::string render_integer(const rational &r) {
  if (!r.is_integer())
    throw numeric_error("render_integer on non-integer value");
  return int128_to_string(r.num);
}

std::string render_decimal3(const rational &r) {
  __int128 scaled = r.round_scaled(3);
  const bool neg = scaled < 0;
  if (neg)
    scaled = -scaled;
  __int128 whole = scaled / 1000;
  int frac = static_cast<int>(scaled % 1000);
  // Trim trailing zeros down to one fractional digit.
  char frac_buf[4];
  std::snprintf(frac_buf, sizeof frac_buf, "%03d", frac);
  std::string frac_str(frac_buf);
  while (frac_str.size() > 1 && frac_str.back() == '0')
    frac_str.pop_back();
  std::string out;
  if (neg && (whole != 0 || frac != 0))
    out.push_back('-');
  out += int128_to_string(whole);
  out.push_back('.');
  out += frac_str;
  return out;
}

std::string shortest_double_string(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

rational rational_from_decimal(const std::string &text) {
  std::size_t pos = 0;
  bool neg = false;
  if (pos < text.size() && (text[pos] == '-' || text[pos] == '+')) {
    neg = text[pos] == '-';
    ++pos;
  }
  __int128 num = 0;
  __int128 den = 1;
  bool saw_digit = false;
  bool in_fraction = false;
  for (; pos < text.size(); ++pos) {
    const char c = text[pos];
    if (c == '.') {
      if (in_fraction)
        throw numeric_error("bad decimal literal: " + text);
      in_fraction = true;
      continue;
    }
    if (c < '0' || c > '9')
      throw numeric_error("bad decimal literal: " + text);
    num = num * 10 + (c - '0');
    if (in_fraction)
      den *= 10;
    saw_digit = true;
  }
  if (!saw_digit)
    throw numeric_error("bad decimal literal: " + text);
  return reduced(neg ? -num : num, den);
}

} // namespace layerlens
