#pragma once

#include <compare>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pataplectic/rational.hpp"

namespace pataplectic {

struct ExprNode;

/// Exact symbolic scalar over integer symbol ids.
///
/// Every Expr is kept in a canonical form: a sum of terms, each a rational
/// coefficient times a monomial in "atoms". Atoms are symbols, the analytic
/// primitives exp/sin/cos/sqrt/log applied to a canonical argument, and
/// reciprocal powers of multi-term sums. Sums are flattened, factors are
/// sorted, like terms are combined, so two polynomial expressions are equal
/// as values iff they are structurally equal. For expressions involving
/// primitives or reciprocal sums this is only sufficient, not necessary; see
/// numerically_zero() for the fallback.
class Expr {
 public:
  Expr();
  Expr(const Rational& value);  // NOLINT(google-explicit-constructor)
  Expr(std::int64_t value);      // NOLINT(google-explicit-constructor)
  Expr(int value) : Expr(static_cast<std::int64_t>(value)) {}

  static Expr symbol(int id);

  bool is_zero() const;
  bool is_constant() const;
  std::optional<Rational> constant_value() const;
  /// True when the expression is a single term (coefficient times monomial).
  bool is_monomial() const;
  std::size_t term_count() const;

  Expr operator-() const;
  friend Expr operator+(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a, const Expr& b);
  friend Expr operator*(const Expr& a, const Expr& b);
  friend Expr operator/(const Expr& a, const Expr& b);
  Expr& operator+=(const Expr& o) { return *this = *this + o; }
  Expr& operator-=(const Expr& o) { return *this = *this - o; }
  Expr& operator*=(const Expr& o) { return *this = *this * o; }

  friend bool operator==(const Expr& a, const Expr& b);
  friend std::strong_ordering operator<=>(const Expr& a, const Expr& b);

  Expr pow(int exponent) const;
  Expr diff(int symbol_id) const;
  Expr substitute(const std::map<int, Expr>& values) const;

  double evaluate(std::span<const double> values) const;
  std::set<int> symbols() const;
  bool depends_on(int symbol_id) const;
  bool depends_on_any(const std::set<int>& ids) const;
  /// Total degree in the given symbols, or nullopt if any of them occurs
  /// inside a primitive, a reciprocal sum, or with a negative power.
  std::optional<int> polynomial_degree(const std::set<int>& ids) const;

  /// Prints in the CLI expression grammar using `name` for symbol ids.
  std::string str(const std::function<std::string(int)>& name) const;
  std::string str() const;

  const ExprNode& node() const { return *node_; }

 private:
  explicit Expr(std::shared_ptr<const ExprNode> node) : node_(std::move(node)) {}
  friend struct ExprBuilder;

  std::shared_ptr<const ExprNode> node_;
};

enum class AtomKind : std::uint8_t { Symbol, Exp, Sin, Cos, Sqrt, Log, ReciprocalSum };

/// Indivisible factor of a monomial. For ReciprocalSum, `arg` is a multi-term
/// sum scaled so its leading coefficient is 1 and the stored exponent is negative.
struct Atom {
  AtomKind kind = AtomKind::Symbol;
  int symbol = -1;
  Expr arg;

  friend bool operator==(const Atom& a, const Atom& b);
  friend std::strong_ordering operator<=>(const Atom& a, const Atom& b);
};

struct Factor {
  Atom atom;
  int exponent = 1;

  friend bool operator==(const Factor&, const Factor&) = default;
  friend std::strong_ordering operator<=>(const Factor& a, const Factor& b);
};

using Monomial = std::vector<Factor>;

struct Term {
  Rational coeff;
  Monomial mono;
};

struct ExprNode {
  std::vector<Term> terms;  // sorted by monomial, no zero coefficients
};

Expr exp(const Expr& e);
Expr sin(const Expr& e);
Expr cos(const Expr& e);
Expr sqrt(const Expr& e);
Expr log(const Expr& e);

}  // namespace pataplectic
