#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pataplectic/chart.hpp"
#include "pataplectic/legendre.hpp"
#include "pataplectic/models.hpp"
#include "pataplectic/observables.hpp"

namespace pataplectic {

class BlowUp : public std::runtime_error {
 public:
  BlowUp(const std::string& what, std::size_t node) : std::runtime_error(what), node_(node) {}
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

class NonHyperbolicInit : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Boundary { Periodic, Fixed };

struct LatticeAxis {
  int nodes = 0;
  double spacing = 0;
  double origin = 0;
  Boundary boundary = Boundary::Periodic;
};

/// Tensor-product lattice over the base. The time axis is always stepped as
/// an initial-value direction; its boundary flag is ignored.
struct LatticeSpec {
  std::vector<LatticeAxis> axes;
  int time_axis = 0;

  int n() const { return static_cast<int>(axes.size()); }
  std::size_t node_count() const;
  std::size_t slice_count() const;  // nodes per time slice
  /// Throws std::invalid_argument naming the offending axis.
  void validate() const;
  /// Spacings halved; periodic axes double their node count and the others
  /// keep both end points.
  LatticeSpec refined() const;
  std::vector<int> multi_index(std::size_t node) const;
  std::size_t flat_index(const std::vector<int>& idx) const;
  std::vector<double> position(std::size_t node) const;
};

/// Everything the solvers and checks need about a model.
struct DynamicsModel {
  enum class Kind { Scalar, String, Lagrangian };
  Kind kind = Kind::Lagrangian;
  Chart chart;
  LagrangianModel lagrangian;
  HamiltonianModel hamiltonian;
  std::optional<ScalarFieldModel> scalar;
  std::optional<StringModel> string;

  static DynamicsModel from(const ScalarFieldModel& m);
  static DynamicsModel from(const StringModel& m);
  static DynamicsModel from(const LagrangianModel& l, const BuildOptions& opts = {});
  /// H as an expression; for string models without a stored closed form it is
  /// assembled from the symbolic inverse of M.
  Expr hamiltonian_expression() const;
};

/// Initial slice data: y(x) and dy/dt(x) as expressions in the base
/// coordinates, evaluated at the first time level.
struct InitialData {
  std::vector<Expr> fields;
  std::vector<Expr> velocities;
};

struct LatticeTrajectory {
  LatticeSpec lattice;
  int dim = 0;               // chart coordinates stored per node
  std::vector<double> data;  // node-major, time slowest
  std::string scheme;

  double at(std::size_t node, int coord) const { return data[node * static_cast<std::size_t>(dim) + coord]; }
  std::span<const double> node(std::size_t i) const {
    return {data.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
};

struct SolveOptions {
  double blow_up = 1e12;
  int fixed_point_iterations = 100;
  double fixed_point_tolerance = 1e-14;
};

/// De Donder-Weyl integration. Scalar models: leapfrog with y on integer and
/// g p^t on half time levels, compact spatial fluxes. String models: the same
/// staggering with the time momentum density, p_ij held on R, a per-node
/// Newton solve for the new field values and fixed-point sweeps for the
/// coupling through neighbouring nodes. eps follows from H = 0.
LatticeTrajectory solve_dw(const DynamicsModel& model, const LatticeSpec& lattice, const InitialData& init,
                           const SolveOptions& opts = {});

/// Euler-Lagrange method of lines for any first-order Lagrangian: state y and
/// u = g dL/dv_t, classical RK4 in time, the same compact flux stencil in
/// space. Nodes are completed with legendre_forward at w = 0.
LatticeTrajectory solve_el(const DynamicsModel& model, const LatticeSpec& lattice, const InitialData& init,
                           const SolveOptions& opts = {});

/// Field values at every node of a time slice, flattened (slice node major).
std::vector<double> slice_fields(const LatticeTrajectory& traj, int time_index, int k, int field_offset);

/// Max |a - b| over the field values of two trajectories on the same lattice.
double field_discrepancy(const LatticeTrajectory& a, const LatticeTrajectory& b, const Chart& chart);
/// Max |y - exact(x)| over all nodes for each field.
double field_error(const LatticeTrajectory& traj, const Chart& chart, const std::vector<Expr>& exact);

/// dq^mu/dx^alpha at a node by centred differences (second-order one-sided at
/// non-periodic ends); rows mu = 0..dim-1.
Eigen::MatrixXd node_jacobian(const LatticeTrajectory& traj, std::size_t node);

/// Components of the pull-back of a form at a node, keyed by sorted base index.
std::map<Index, double> pull_back(const Chart& chart, const DifferentialForm& form, const LatticeTrajectory& traj,
                                  std::size_t node);

struct ResidualReport {
  std::string name;
  double max_residual = 0;
  std::size_t worst_node = 0;
  std::vector<double> extra;  // check-specific values
};

/// da|G against {H omega, a}|G = -g sum_mu dH/dq^mu (Xi^mu - Xi^alpha dq^mu/dx^alpha)
/// at nodes at least two steps from any non-periodic end.
ResidualReport verify_hamiltonian_flow(const DynamicsModel& model, const LatticeTrajectory& traj, const ObservableForm& a);

struct StokesReport {
  double bulk = 0;
  double boundary = 0;
  double difference = 0;
};

/// Trapezoidal integral of {H omega, a}|G over the node box [lo, hi] against
/// the boundary integral of a|G.
StokesReport stokes_check(const DynamicsModel& model, const LatticeTrajectory& traj, const ObservableForm& a,
                          const std::vector<int>& lo, const std::vector<int>& hi);

/// d lambda|G against the omega-bracket pulled back to the lattice.
ResidualReport verify_omega_flow(const DynamicsModel& model, const LatticeTrajectory& traj,
                             const DifferentialForm& lambda);

/// Residual of d_a(g S^a_b) - d_b(g L) with the explicit x-derivative on the
/// right; S from centred velocities.
ResidualReport stress_energy(const DynamicsModel& model, const LatticeTrajectory& traj);

/// S^a_b at one node.
Eigen::MatrixXd stress_energy_at(const DynamicsModel& model, const LatticeTrajectory& traj, std::size_t node);

/// Trapezoidal integral of a|S_t over the time slice with index t.
double slice_integral(const DynamicsModel& model, const LatticeTrajectory& traj, const ObservableForm& a, int t);
double slice_integral(const DynamicsModel& model, const LatticeTrajectory& traj, const DifferentialForm& a, int t);

struct SliceBracketReport {
  double bracket_integral = 0;  // int_S {P_g, Q^f}
  double expected = 0;          // trapezoid of f^t g times the volume weight
  double difference = 0;
  double qq_integral = 0;       // int_S {Q^f, Q^f'}
};

/// Field momentum P_{i,g} against position Q^{i,f} on slice t.
SliceBracketReport slice_bracket_check(const DynamicsModel& model, const LatticeTrajectory& traj,
                                       const std::vector<Expr>& f, const Expr& g, int t, int field = 0);

/// Max over interior time levels of |d/dt int a - int {eta_0, a} - int a_t|
/// where `a_t` is `a` with the explicit time derivative of its coefficient.
ResidualReport slice_evolution(const DynamicsModel& model, const LatticeTrajectory& traj, const ObservableForm& a,
                               const ObservableForm& a_t);

/// Slice energy int eta_0 at every time level and its maximal drift.
ResidualReport slice_energy(const DynamicsModel& model, const LatticeTrajectory& traj);

/// int_G (theta - H omega) and int L omega with trapezoidal weights.
struct ActionReport {
  double hamiltonian_action = 0;
  double lagrangian_action = 0;
  double difference = 0;
};
ActionReport action_consistency(const DynamicsModel& model, const LatticeTrajectory& traj);

struct NoetherReport {
  bool symmetric = false;
  std::string witness;          // a nonzero component of L_Xi(theta - H omega)
  bool identity_holds = false;  // {H omega, P_xi} = L_Xi(theta - H omega) + d(xi ⌟ H omega)
  double current_residual = 0;  // max |d P*_xi|G| when symmetric
  std::size_t worst_node = 0;
};

/// `xi` has one component per coordinate of X x Y.
NoetherReport noether_check(const DynamicsModel& model, const LatticeTrajectory& traj, const std::vector<Expr>& xi);

/// Residual of (1/g) d_a(g G^{ab}_{ij} d_b y^j) - 1/2 dG^{bc}_{jk}/dy^i d_b y^j d_c y^k.
ResidualReport string_el_residual(const StringModel& model, const LatticeTrajectory& traj);

/// Least-squares slope of -log2(error) against refinement level.
double convergence_order(const std::vector<double>& errors);

}  // namespace pataplectic
