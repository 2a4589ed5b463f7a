#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "pataplectic/chart.hpp"
#include "pataplectic/expr.hpp"
#include "pataplectic/expr_tools.hpp"

namespace pataplectic {

class SingularHessian : public std::runtime_error {
 public:
  explicit SingularHessian(const std::string& what, double condition = 0)
      : std::runtime_error(what), condition_(condition) {}
  double condition() const { return condition_; }

 private:
  double condition_;
};

class NoConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// <p, z> for z = Z_1 ^ ... ^ Z_n with Z_a = d/dx^a + v^i_a d/dy^i, as an
/// expression in the chart coordinates and velocity symbols.
Expr pairing_expression(const Chart& chart);
/// Numeric <p, Z> for an (n+k) x n matrix of column vectors Z_a.
double pairing_value(const Chart& chart, std::span<const double> coords, const Eigen::MatrixXd& z);
/// Z = [I_n; v] from velocities v^i_a stored at i*n + a.
Eigen::MatrixXd tangent_matrix(const Chart& chart, std::span<const double> velocity);

/// L(x, y, v) with its Legendre generating function W = <p, z> - L.
class LagrangianModel {
 public:
  LagrangianModel(Chart chart, Expr lagrangian);

  const Chart& chart() const { return chart_; }
  const Expr& lagrangian() const { return lagrangian_; }
  const Expr& generating_function() const { return impl_->w; }
  bool quadratic() const { return impl_->quadratic; }
  int velocity_count() const { return chart_.k() * chart_.n(); }

  /// dW/dv^i_a and d2W/dv dv as expressions (index i*n + a).
  const std::vector<Expr>& w_gradient() const { return impl_->grad; }
  const std::vector<Expr>& w_hessian() const { return impl_->hess; }

  double lagrangian_value(std::span<const double> q, std::span<const double> v) const;
  double w_value(std::span<const double> values) const { return impl_->w_c(values); }
  Eigen::VectorXd w_gradient_value(std::span<const double> values) const;
  Eigen::MatrixXd w_hessian_value(std::span<const double> values) const;
  /// dL/dq^mu at (q, v) for mu in 0..n+k-1.
  std::vector<double> lagrangian_q_gradient(std::span<const double> q, std::span<const double> v) const;
  /// dL/dv^i_a at (q, v).
  std::vector<double> lagrangian_v_gradient(std::span<const double> q, std::span<const double> v) const;

  /// Full symbol vector (coords then velocities) from separate parts.
  std::vector<double> pack(std::span<const double> coords, std::span<const double> velocity) const;

 private:
  struct Impl {
    Expr w;
    bool quadratic = false;
    std::vector<Expr> grad;
    std::vector<Expr> hess;
    CompiledExpr l_c;
    CompiledExpr w_c;
    std::vector<CompiledExpr> grad_c;
    std::vector<CompiledExpr> hess_c;
    std::vector<CompiledExpr> lq_c;
    std::vector<CompiledExpr> lv_c;
  };
  Chart chart_;
  Expr lagrangian_;
  std::shared_ptr<const Impl> impl_;
};

struct InvertOptions {
  double tol = 1e-12;
  int max_iter = 50;
  double max_condition = 1e12;
  std::vector<double> initial;  // empty means v = 0
};

struct InvertResult {
  std::vector<double> velocity;
  double residual = 0;
  int iterations = 0;
  double condition = 0;
  std::vector<double> residual_history;
};

/// Forward map (q, v, w) -> full chart coordinates. Momenta of degree >= 2
/// are taken from `higher` (symbol id -> value, default 0); p^a_i and eps are
/// then fixed by dW/dv = 0 and W = w.
std::vector<double> legendre_forward(const LagrangianModel& model, std::span<const double> q,
                                     std::span<const double> v, double w,
                                     const std::map<int, double>& higher = {});
/// Symbolic Weyl forward map: p^a_i = dL/dv^i_a, eps = w + L - sum p v, with
/// `w` an arbitrary expression.
std::map<int, Expr> legendre_forward_expressions(const LagrangianModel& model, const Expr& w = Expr());

/// Solves dW/dv = 0 for v at the given coordinates.
InvertResult legendre_invert(const LagrangianModel& model, std::span<const double> coords,
                             const InvertOptions& opts = {});

/// H(q, p) with numeric value, gradient and velocity map; symbolic when a
/// closed form is known.
class HamiltonianModel {
 public:
  static HamiltonianModel from_expression(Chart chart, Expr hamiltonian, std::vector<Expr> velocity = {});

  const Chart& chart() const { return impl_->chart; }
  bool has_expression() const { return impl_->expression.has_value(); }
  const Expr& expression() const;
  bool has_velocity_expressions() const { return !impl_->velocity.empty(); }
  const std::vector<Expr>& velocity_expressions() const { return impl_->velocity; }
  const LagrangianModel* lagrangian() const { return impl_->lagrangian ? &*impl_->lagrangian : nullptr; }

  double value(std::span<const double> coords) const;
  /// dH/dcoord for every chart coordinate.
  std::vector<double> gradient(std::span<const double> coords) const;
  /// V(q, p) as v^i_a at i*n + a.
  std::vector<double> velocity(std::span<const double> coords) const;
  bool in_domain(std::span<const double> coords) const;

  /// Builder hook; prefer build_hamiltonian.
  static HamiltonianModel assemble(LagrangianModel lagrangian, std::optional<Expr> expression,
                                   std::vector<Expr> velocity);

 private:
  struct Impl {
    Chart chart;
    std::optional<Expr> expression;
    std::vector<Expr> velocity;
    std::optional<LagrangianModel> lagrangian;
    CompiledExpr value_c;
    std::vector<CompiledExpr> grad_c;
    std::vector<CompiledExpr> velocity_c;
    std::vector<CompiledExpr> w_coord_grad_c;  // dW/dcoord, used with numeric velocity
  };
  explicit HamiltonianModel(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

struct BuildOptions {
  bool symbolic = true;
  int max_symbolic_size = 4;  // symbolic inverse only for small Hessians (or diagonal ones)
};

HamiltonianModel build_hamiltonian(const LagrangianModel& lagrangian, const BuildOptions& opts = {});

struct DHReport {
  double momentum_residual = 0;  // max |dH/dp_J - Z^J|
  double position_residual = 0;  // max |dH/dq + dL/dq|
  double eps_residual = 0;       // |dH/deps - 1|
};

/// Compares Richardson finite differences of H with the determinant minors of
/// the velocity columns and with -dL/dq at the Legendre velocity.
DHReport verify_dH(const HamiltonianModel& model, std::span<const double> coords);

/// n x n Hamiltonian tensor H^a_b at a phase point (row a, column b).
Eigen::MatrixXd hamiltonian_tensor(const HamiltonianModel& model, std::span<const double> coords);
/// Stress-energy S^a_b = delta L - dL/dv^i_a du^i/dx^b at (x, u, du).
Eigen::MatrixXd stress_energy_tensor(const LagrangianModel& model, std::span<const double> q,
                                     std::span<const double> v);

struct LegendrePointVerdict {
  bool invertible = false;
  double condition = 0;
};

struct LegendreConditionReport {
  std::vector<LegendrePointVerdict> points;
  double fraction_in_domain = 0;
};

LegendreConditionReport check_legendre_condition(const LagrangianModel& model,
                                                 const std::vector<std::vector<double>>& samples,
                                                 double max_condition = 1e12);

/// Condition number (2-norm) of a square matrix; infinity when singular.
double condition_number(const Eigen::MatrixXd& m);

}  // namespace pataplectic
