#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "pataplectic/expr.hpp"

namespace pataplectic {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at offset " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

using SymbolResolver = std::function<std::optional<Expr>(std::string_view)>;

// Grammar: infix + - * / with ^ binding tighter than unary minus. Exponents
// are integer literals, optionally parenthesized and negative; a parenthesized exponent of
// the form k/2 is read as a power of sqrt. Decimal literals are exact.
// Function calls: exp sin cos sqrt log.
Expr parse_expression(std::string_view text, const SymbolResolver& resolve);

}  // namespace pataplectic
