#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pataplectic/expr.hpp"
#include "pataplectic/parse.hpp"

namespace pataplectic {

using Index = std::vector<int>;

struct Canonical {
  Index index;  // sorted; empty when sign == 0
  int sign = 0;
};

/// Sorts `indices` and reports the permutation parity; sign 0 on a repeat.
/// Throws std::out_of_range for entries outside [0, dim).
Canonical canonicalize(std::span<const int> indices, int dim);

/// A named momentum coordinate p^{alphas}_{fields}. `slots` is the base tuple
/// (0..n-1) with each alpha slot replaced by the y-coordinate n+field, so the
/// momentum multiplies dq^{slots} in the Cartan form. `sorted` is the same
/// index ordered increasingly and dq^{slots} = sign dq^{sorted}.
struct Momentum {
  int symbol = -1;
  std::vector<int> alphas;
  std::vector<int> fields;
  Index slots;
  Index sorted;
  int sign = 1;
  std::string name;
  int degree() const { return static_cast<int>(alphas.size()); }
};

/// Coordinate patch on the multimomentum phase space.
///
/// Symbol ids double as form coordinates: x^a -> a, y^i -> n+i, eps -> n+k,
/// then the momenta of each present degree. Velocity symbols v^i_a used by
/// Lagrangians come after the form coordinates and never carry differentials.
class Chart {
 public:
  Chart() : Chart(1, 1, {0, 1}) {}
  Chart(int n, int k, std::set<int> momentum_degrees);
  static Chart weyl(int n, int k) { return Chart(n, k, {0, 1}); }
  static Chart full(int n, int k);

  int n() const { return n_; }
  int k() const { return k_; }
  const std::set<int>& momentum_degrees() const { return degrees_; }
  int dim() const { return dim_; }
  int symbol_count() const { return dim_ + n_ * k_; }

  int x(int alpha) const { return alpha; }
  int y(int i) const { return n_ + i; }
  int q(int mu) const { return mu; }
  int eps() const { return n_ + k_; }
  int velocity(int i, int alpha) const { return dim_ + i * n_ + alpha; }
  bool is_base(int id) const { return id >= 0 && id < n_; }
  bool is_field(int id) const { return id >= n_ && id < n_ + k_; }
  bool is_momentum(int id) const { return id >= n_ + k_ && id < dim_; }
  bool is_velocity(int id) const { return id >= dim_ && id < symbol_count(); }

  const std::vector<Momentum>& momenta() const { return momenta_; }
  const Momentum& momentum_of(int symbol) const;
  /// Symbol of p^{alphas}_{fields} for sorted inputs; nullopt if absent.
  std::optional<int> momentum_symbol(const std::vector<int>& alphas, const std::vector<int>& fields) const;
  /// The momentum whose canonical q-index is `sorted`; nullptr if absent.
  const Momentum* momentum_at(const Index& sorted) const;
  /// Value of the antisymmetric coordinate p_J for an arbitrary tuple J, as
  /// an expression in the named momenta (zero when J repeats or is absent).
  Expr p_component(std::span<const int> tuple) const;

  /// Weight g of the base volume form g dx^1..dx^n (default 1).
  const Expr& volume_weight() const { return volume_; }
  Chart with_volume_weight(Expr weight) const;
  bool flat_volume() const;

  std::string name(int id) const;
  std::optional<int> lookup(std::string_view name) const;
  Expr sym(int id) const { return Expr::symbol(id); }

  /// Resolver for the expression grammar. `parameters` take precedence and
  /// are substituted as constants or expressions.
  SymbolResolver resolver(const std::map<std::string, Expr>& parameters = {}) const;
  Expr parse(std::string_view text, const std::map<std::string, Expr>& parameters = {}) const;
  std::string print(const Expr& e) const;

 private:
  int n_;
  int k_;
  std::set<int> degrees_;
  int dim_ = 0;
  std::vector<Momentum> momenta_;
  std::map<Index, int> by_sorted_;
  Expr volume_{1};
};

}  // namespace pataplectic
