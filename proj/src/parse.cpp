#include "pataplectic/parse.hpp"

#include <cctype>

namespace pataplectic {
namespace {

class Parser {
 public:
  Parser(std::string_view text, const SymbolResolver& resolve) : text_(text), resolve_(resolve) {}

  Expr parse() {
    Expr e = sum();
    skip_space();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  Expr sum() {
    Expr e = product();
    for (;;) {
      if (accept('+'))
        e += product();
      else if (accept('-'))
        e -= product();
      else
        return e;
    }
  }

  Expr product() {
    Expr e = unary();
    for (;;) {
      if (accept('*')) {
        e *= unary();
      } else if (accept('/')) {
        Expr d = unary();
        if (d.is_zero()) fail("division by zero");
        e = e / d;
      } else {
        return e;
      }
    }
  }

  Expr unary() {
    if (accept('-')) return -unary();
    if (accept('+')) return unary();
    return power();
  }

  Rational exponent() {
    skip_space();
    bool paren = accept('(');
    bool negative = accept('-');
    skip_space();
    std::size_t start = pos_;
    // A fraction is only part of the exponent inside parentheses, so x^2/2 is (x^2)/2.
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || (paren && text_[pos_] == '/')))
      ++pos_;
    if (start == pos_) fail("expected integer exponent");
    Rational r = Rational::parse(std::string(text_.substr(start, pos_ - start)));
    if (paren) expect(')');
    return negative ? -r : r;
  }

  Expr power() {
    Expr base = primary();
    if (!accept('^')) return base;
    Rational e = exponent();
    if (e.is_integer()) {
      if (e.num() < 0 && base.is_zero()) fail("negative power of zero");
      return base.pow(static_cast<int>(e.num()));
    }
    if (e.den() == 2) return sqrt(base).pow(static_cast<int>(e.num()));
    fail("only integer and half-integer exponents are supported");
  }

  Expr number() {
    std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t save = pos_++;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      } else {
        pos_ = save;
      }
    }
    std::string lit(text_.substr(start, pos_ - start));
    if (!lit.empty() && lit[0] == '.') lit = "0" + lit;
    try {
      return Expr(Rational::parse(lit));
    } catch (const std::exception&) {
      pos_ = start;
      fail("malformed number '" + lit + "'");
    }
  }

  Expr primary() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of expression");
    char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Expr e = sum();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
        ++pos_;
      std::string_view name = text_.substr(start, pos_ - start);
      skip_space();
      if (pos_ < text_.size() && text_[pos_] == '(') {
        ++pos_;
        Expr arg = sum();
        expect(')');
        if (name == "exp") return exp(arg);
        if (name == "sin") return sin(arg);
        if (name == "cos") return cos(arg);
        if (name == "sqrt") return sqrt(arg);
        if (name == "log") return log(arg);
        pos_ = start;
        fail("unknown function '" + std::string(name) + "'");
      }
      if (auto value = resolve_(name)) return *value;
      pos_ = start;
      fail("unknown identifier '" + std::string(name) + "'");
    }
    fail(std::string("unexpected '") + c + "'");
  }

  std::string_view text_;
  const SymbolResolver& resolve_;
  std::size_t pos_ = 0;
};

}  // namespace

Expr parse_expression(std::string_view text, const SymbolResolver& resolve) {
  return Parser(text, resolve).parse();
}

}  // namespace pataplectic
