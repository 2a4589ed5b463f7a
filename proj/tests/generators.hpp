#pragma once

#include <random>
#include <vector>

#include "pataplectic/chart.hpp"
#include "pataplectic/forms.hpp"

namespace gen {

using pataplectic::Expr;
using pataplectic::Rational;

struct Rng {
  explicit Rng(std::uint64_t seed) : engine(seed) {}
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine); }
  bool coin() { return integer(0, 1) == 1; }
  std::mt19937_64 engine;
};

/// Random polynomial of total degree <= max_degree in `symbols` with small
/// integer coefficients.
inline Expr polynomial(Rng& rng, const std::vector<int>& symbols, int max_degree, int max_terms = 3) {
  Expr out;
  int terms = rng.integer(1, max_terms);
  for (int t = 0; t < terms; ++t) {
    Expr term(rng.integer(-3, 3));
    int degree = rng.integer(0, max_degree);
    for (int d = 0; d < degree && !symbols.empty(); ++d)
      term *= Expr::symbol(symbols[static_cast<std::size_t>(rng.integer(0, static_cast<int>(symbols.size()) - 1))]);
    out += term;
  }
  return out;
}

inline std::vector<int> range(int lo, int hi) {
  std::vector<int> v;
  for (int i = lo; i < hi; ++i) v.push_back(i);
  return v;
}

inline pataplectic::DifferentialForm form(Rng& rng, int dim, int degree, const std::vector<int>& symbols,
                                          int max_degree, int max_terms = 3) {
  pataplectic::DifferentialForm f(dim, degree);
  int terms = rng.integer(1, max_terms);
  for (int t = 0; t < terms; ++t) {
    std::vector<int> idx;
    for (int d = 0; d < degree; ++d) idx.push_back(rng.integer(0, dim - 1));
    f.add(idx, polynomial(rng, symbols, max_degree));
  }
  return f;
}

inline pataplectic::VectorField vector_field(Rng& rng, int dim, const std::vector<int>& directions,
                                             const std::vector<int>& symbols, int max_degree) {
  pataplectic::VectorField v(dim, 1);
  for (int mu : directions) v.add({mu}, polynomial(rng, symbols, max_degree));
  return v;
}

}  // namespace gen
