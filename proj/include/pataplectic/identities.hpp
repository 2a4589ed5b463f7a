#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pataplectic/chart.hpp"
#include "pataplectic/observables.hpp"

namespace pataplectic {

/// Small random polynomials and observables for the randomized suites.
class ObservableSampler {
 public:
  ObservableSampler(const Chart& chart, std::uint64_t seed) : chart_(chart), state_(seed) {}

  Expr polynomial(const std::vector<int>& symbols, int max_degree = 2, int max_terms = 3);
  Expr base_function();          // g(x)
  std::vector<Expr> base_vector();  // f^a(x)
  ObservableForm position();
  ObservableForm momentum();         // P_{mu,g}, any mu on X x Y
  ObservableForm field_momentum();   // P_{i,g}
  ObservableForm base_momentum();    // P_{a,g} with g nonzero
  ObservableForm generalized_position();
  ObservableForm generalized_momentum();
  ObservableForm any();
  /// eps + polynomial of degree <= 2 in the other coordinates.
  Expr hamiltonian();
  int integer(int lo, int hi);
  std::uint64_t next_seed();

 private:
  std::uint64_t next();
  const Chart& chart_;
  std::uint64_t state_;
};

struct IdentityCheck {
  std::string name;
  int instances = 0;
  int failures = 0;
  double max_residual = 0;
  std::string first_failure;
  bool passed() const { return failures == 0 && instances > 0; }
};

/// Closed forms of Xi, closure of the p-bracket, the generalized and
/// first-order bracket tables, Omega-symmetry of pataplectic fields, the
/// Noether relation, antisymmetry and the commutator-level Jacobi identity;
/// `instances` random cases each.
std::vector<IdentityCheck> run_identity_suite(const Chart& chart, std::uint64_t seed, int instances);

/// Admissibility dichotomy, agreement of the external p-bracket with the
/// omega-bracket, X-independence and the omega-bracket examples.
std::vector<IdentityCheck> run_admissibility_suite(const Chart& chart, std::uint64_t seed, int instances);

}  // namespace pataplectic
