#include "pataplectic/rational.hpp"

#include <cctype>
#include <limits>

namespace pataplectic {
namespace {

__int128 gcd128(__int128 a, __int128 b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    __int128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

bool fits64(__int128 v) {
  return v >= std::numeric_limits<std::int64_t>::min() && v <= std::numeric_limits<std::int64_t>::max();
}

}  // namespace

Rational::Rational(std::int64_t num, std::int64_t den) {
  *this = from_wide(num, den);
}

Rational Rational::from_wide(__int128 num, __int128 den) {
  if (den == 0) throw std::domain_error("rational with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  __int128 g = gcd128(num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  if (!fits64(num) || !fits64(den)) throw std::overflow_error("rational coefficient overflow");
  Rational r;
  r.num_ = static_cast<std::int64_t>(num);
  r.den_ = static_cast<std::int64_t>(den);
  return r;
}

std::string Rational::str() const {
  if (den_ == 1) return std::to_string(num_);
  return std::to_string(num_) + "/" + std::to_string(den_);
}

Rational Rational::operator-() const { return from_wide(-static_cast<__int128>(num_), den_); }

Rational Rational::reciprocal() const {
  if (num_ == 0) throw std::domain_error("reciprocal of zero");
  return from_wide(den_, num_);
}

Rational Rational::pow(int exponent) const {
  Rational base = exponent < 0 ? reciprocal() : *this;
  int e = exponent < 0 ? -exponent : exponent;
  Rational result(1);
  while (e > 0) {
    if (e & 1) result *= base;
    e >>= 1;
    if (e > 0) base *= base;
  }
  return result;
}

Rational operator+(const Rational& a, const Rational& b) {
  return Rational::from_wide(static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_,
                             static_cast<__int128>(a.den_) * b.den_);
}

Rational operator-(const Rational& a, const Rational& b) { return a + (-b); }

Rational operator*(const Rational& a, const Rational& b) {
  return Rational::from_wide(static_cast<__int128>(a.num_) * b.num_, static_cast<__int128>(a.den_) * b.den_);
}

Rational operator/(const Rational& a, const Rational& b) { return a * b.reciprocal(); }

std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
  __int128 lhs = static_cast<__int128>(a.num_) * b.den_;
  __int128 rhs = static_cast<__int128>(b.num_) * a.den_;
  if (lhs < rhs) return std::strong_ordering::less;
  if (lhs > rhs) return std::strong_ordering::greater;
  return std::strong_ordering::equal;
}

Rational Rational::parse(const std::string& text) {
  std::size_t pos = 0;
  bool negative = false;
  if (pos < text.size() && (text[pos] == '-' || text[pos] == '+')) negative = text[pos++] == '-';
  __int128 mantissa = 0;
  int scale = 0;
  bool any_digit = false;
  auto push_digit = [&](char c) {
    mantissa = mantissa * 10 + (c - '0');
    if (mantissa > static_cast<__int128>(std::numeric_limits<std::int64_t>::max()) * 1000)
      throw std::overflow_error("numeric literal too long: " + text);
    any_digit = true;
  };
  while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) push_digit(text[pos++]);
  if (pos < text.size() && text[pos] == '/') {
    ++pos;
    Rational numerator = from_wide(negative ? -mantissa : mantissa, 1);
    return numerator / parse(text.substr(pos));
  }
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      push_digit(text[pos++]);
      --scale;
    }
  }
  if (!any_digit) throw std::invalid_argument("malformed number: " + text);
  if (pos < text.size() && (text[pos] == 'e' || text[pos] == 'E')) {
    ++pos;
    std::size_t used = 0;
    int exponent = std::stoi(text.substr(pos), &used);
    pos += used;
    scale += exponent;
  }
  if (pos != text.size()) throw std::invalid_argument("malformed number: " + text);
  if (negative) mantissa = -mantissa;
  Rational value = from_wide(mantissa, 1);
  return value * Rational(10).pow(scale);
}

}  // namespace pataplectic
