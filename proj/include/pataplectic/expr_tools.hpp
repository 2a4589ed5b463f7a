#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pataplectic/expr.hpp"

namespace pataplectic {

struct ZeroTestOptions {
  int points = 30;
  double tolerance = 1e-12;
  double lo = 0.3;
  double hi = 1.3;
  std::uint64_t seed = 0x5eed;
};

/// Symbolic zero first; otherwise the expression is sampled at random points
/// and compared against the magnitude of its individual terms.
bool is_zero_value(const Expr& e, const ZeroTestOptions& opts = {});

/// Largest |e| relative to its term scale over the sample points. Zero when
/// the expression is symbolically zero.
double numeric_residual(const Expr& e, const ZeroTestOptions& opts = {});

/// Flattened evaluator for hot loops on lattices.
class CompiledExpr {
 public:
  CompiledExpr() = default;
  explicit CompiledExpr(const Expr& e);

  double operator()(std::span<const double> values) const;

 private:
  struct AtomSlot {
    AtomKind kind;
    int symbol;
    int arg;
  };
  struct FactorSlot {
    int atom;
    int exponent;
  };
  struct TermRow {
    double coeff;
    std::uint32_t begin;
    std::uint32_t end;
  };

  std::vector<CompiledExpr> args_;
  std::vector<AtomSlot> atoms_;
  std::vector<FactorSlot> factors_;
  std::vector<TermRow> terms_;
};

}  // namespace pataplectic
