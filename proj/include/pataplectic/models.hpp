#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "pataplectic/chart.hpp"
#include "pataplectic/legendre.hpp"
#include "pataplectic/matrix.hpp"

namespace pataplectic {

/// Interacting scalar fields on a (pseudo-)Riemannian base:
/// L = 1/2 g^{ab} v^i_a v^i_b - V, H = eps + 1/2 g_{ab} p^a_i p^b_i + V.
struct ScalarFieldModel {
  Chart chart;  // Weyl chart carrying the volume weight sqrt(sign det g)
  ExprMatrix metric;
  ExprMatrix inverse_metric;
  Expr potential;
  LagrangianModel lagrangian;
  HamiltonianModel hamiltonian;
};

/// `metric` and `potential` are expressions over `chart` (a Weyl chart);
/// the potential may depend on x and y.
ScalarFieldModel build_scalar_model(const Chart& chart, const ExprMatrix& metric, const Expr& potential);

/// Minkowski metric diag(1, -1, ..., -1) with time axis x1, one field and
/// V = m^2 y^2 / 2 unless `potential` is given.
ScalarFieldModel klein_gordon_preset(int n = 2, Rational mass = Rational(1), std::optional<Expr> potential = {});

/// Bosonic string: L = 1/2 G^{ab}_{ij} v^i_a v^j_b with
/// G = h g^{-1} + b eps^{ab} / g on a two-dimensional base.
struct StringModel {
  Chart chart;  // (2, k) with momentum degrees {0,1,2} and volume weight g
  ExprMatrix metric;
  ExprMatrix inverse_metric;
  ExprMatrix target_metric;
  ExprMatrix b_form;
  Expr weight;
  ExprMatrix G;  // rows/cols indexed i*2 + a
  ExprMatrix M;  // G - p_ij eps^{ab}
  LagrangianModel lagrangian;
  HamiltonianModel hamiltonian;

  Eigen::MatrixXd M_value(std::span<const double> coords) const;
  /// K = M^{-1} by a dense solve; throws SingularHessian outside the domain.
  Eigen::MatrixXd K_value(std::span<const double> coords) const;
  Eigen::MatrixXd dM_dy_value(int field, std::span<const double> coords) const;
  /// Replaces p_ij by b_ij(y)/g(x) so the point lies on the submanifold R.
  void project_to_R(std::vector<double>& coords) const;
  /// Momenta of degree 2 on R at (x, y), keyed by symbol.
  std::map<int, double> R_momenta(std::span<const double> q) const;
};

StringModel build_string_model(const Chart& chart, const ExprMatrix& metric, const ExprMatrix& target_metric,
                               const ExprMatrix& b_form);
/// Euclidean worldsheet, flat target, b = 0.
StringModel harmonic_map_preset(int k = 2);

/// sqrt(s det g) with s the sign of det g at a sample point, so the weight is
/// positive without introducing an absolute value.
Expr volume_weight_of(const ExprMatrix& metric);

}  // namespace pataplectic
