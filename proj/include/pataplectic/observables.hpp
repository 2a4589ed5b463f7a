#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pataplectic/chart.hpp"
#include "pataplectic/forms.hpp"

namespace pataplectic {

class NotPataplectic : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotAdmissible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One component zeta^{c}_{I} of a generalized position: the coefficient of
/// d/dp_I ^ d/dq^c, where I is a sorted momentum index and c belongs to I.
struct ZetaEntry {
  Index momentum;
  int coordinate = -1;
  Expr coeff;
};

enum class ObservableKind {
  Position,             // Q^{i,f} = y^i f ⌟ omega
  GeneralizedPosition,  // Q^zeta = zeta ⌟ Omega
  Momentum,             // P_{mu,g} = g d/dq^mu ⌟ theta
  GeneralizedMomentum,  // P_xi = xi ⌟ theta
  StarMomentum,         // P*_{mu,g} = g d/dq^mu ⌟ (theta - H omega)
  HamiltonianDensity,   // H omega
  Eta,                  // H omega - theta
  EtaSlice,             // -d/dt ⌟ (theta - H omega)
  Generic,
};

struct ObservableForm {
  ObservableKind kind = ObservableKind::Generic;
  int field = -1;              // Position
  std::vector<Expr> f;         // Position: f^a(x)
  int coordinate = -1;         // Momentum, StarMomentum
  Expr weight{1};              // Momentum, StarMomentum
  std::vector<Expr> xi;        // GeneralizedMomentum: xi^mu on X x Y
  std::vector<ZetaEntry> zeta; // GeneralizedPosition
  int time_axis = 0;           // EtaSlice
  Expr hamiltonian;            // StarMomentum, HamiltonianDensity, Eta, EtaSlice
  DifferentialForm form;       // Generic
  std::string label;

  static ObservableForm position(int field, std::vector<Expr> f);
  static ObservableForm generalized_position(std::vector<ZetaEntry> zeta);
  static ObservableForm momentum(int coordinate, Expr g = Expr(1));
  static ObservableForm generalized_momentum(std::vector<Expr> xi);
  static ObservableForm star_momentum(int coordinate, Expr g, Expr hamiltonian);
  static ObservableForm hamiltonian_density(Expr hamiltonian);
  static ObservableForm eta(Expr hamiltonian);
  static ObservableForm eta_slice(Expr hamiltonian, int time_axis = 0);
  static ObservableForm generic(DifferentialForm form, std::string label = "a");

  /// Degree of the expanded form (n for H omega and eta, n-1 otherwise).
  int degree(const Chart& chart) const;
  DifferentialForm expand(const Chart& chart) const;
};

/// Parses the CLI observable grammar, e.g. "Q[y1](1; x1)", "P[y1](x2)",
/// "Pstar[x1](1)", "Pxi(1; 0; y1)", "Qzeta(eps@x1 = y1)", "Homega", "eta",
/// "eta0", "eta0[x2]", "form[1](x2 = y1; y1 = x1)". Hamiltonian-dependent
/// observables require `hamiltonian`.
ObservableForm parse_observable(const Chart& chart, const std::string& text,
                                const std::optional<Expr>& hamiltonian = {});

struct PataplecticVectorField {
  VectorField field;
  std::string origin;
  bool closed_form = false;  // true when produced by an explicit formula
};

/// Pi^nu_mu = sum_I sum_a p_{I[a -> mu]} delta^nu_{I_a} d/dp_I.
VectorField momentum_shift(const Chart& chart, int nu, int mu);

/// Xi with da = -Xi ⌟ Omega. Uses the explicit formulas where they hold and
/// otherwise solves the linear system symbolically. Throws NotPataplectic when
/// no solution exists and std::domain_error when Omega is degenerate.
PataplecticVectorField xi_of(const Chart& chart, const ObservableForm& a);
/// The explicit formula alone, when one applies to this observable.
std::optional<VectorField> xi_closed_form(const Chart& chart, const ObservableForm& a);
/// Symbolic solve of da = -Xi ⌟ Omega for an arbitrary (n-1)-form.
VectorField xi_solve(const Chart& chart, const DifferentialForm& a);

/// da + Xi ⌟ Omega; zero when Xi is the pataplectic field of a.
DifferentialForm xi_defect(const Chart& chart, const DifferentialForm& a, const VectorField& xi);

/// {a, b} = Xi(b) ⌟ Xi(a) ⌟ Omega.
DifferentialForm pbracket_internal(const Chart& chart, const ObservableForm& a, const ObservableForm& b);
/// {a, b} = -Xi(b) ⌟ da for a form a of degree <= n.
DifferentialForm pbracket_external(const Chart& chart, const DifferentialForm& a, const ObservableForm& b);
DifferentialForm pbracket_external(const Chart& chart, const ObservableForm& a, const ObservableForm& b);

struct AdmissibilityVerdict {
  bool admissible = true;
  int beta = -1;        // offending base direction when not admissible
  Expr component;       // dx^beta(Xi(a))
};

AdmissibilityVerdict is_admissible(const Chart& chart, const ObservableForm& a);

/// An n-vector X with (-1)^n X ⌟ Omega = dH modulo dx^1..dx^n. Components not
/// fixed by that condition are drawn from `seed`.
MultiVectorField hamiltonian_nvector(const Chart& chart, const Expr& hamiltonian, std::uint64_t seed);
/// (-1)^n X ⌟ Omega - dH with the dx components dropped.
DifferentialForm hamiltonian_nvector_defect(const Chart& chart, const Expr& hamiltonian, const MultiVectorField& x);

/// X # lambda = sum_A (X ⌟ (dx^A ^ d lambda)) d_A ⌟ omega, |A| = n - deg(lambda) - 1.
DifferentialForm sharp(const Chart& chart, const MultiVectorField& x, const DifferentialForm& lambda);

/// {H omega, lambda}_omega. Admissibility is checked by Xi
/// inspection for (n-1)-forms, accepted outright for forms on X x Y, and
/// otherwise tested by comparing two random completions of X.
DifferentialForm omega_bracket(const Chart& chart, const Expr& hamiltonian, const DifferentialForm& lambda,
                               std::uint64_t seed = 1);

/// True when every coefficient and differential lives on X x Y.
bool lives_on_base_and_fibre(const Chart& chart, const DifferentialForm& a);

enum class TableFlag { Match, Mismatch, NotStated };

struct BracketEntry {
  std::string left;
  std::string right;
  std::string kind;  // internal | external | undefined
  std::optional<DifferentialForm> value;
  std::optional<DifferentialForm> expected;
  TableFlag flag = TableFlag::NotStated;
  std::string note;
};

struct BracketTableInputs {
  std::vector<Expr> f;        // left position forms
  std::vector<Expr> f_tilde;  // right position forms
  Expr g;                     // left momentum weight
  Expr g_tilde;               // right momentum weight
};

BracketTableInputs default_table_inputs(const Chart& chart);

/// Every ordered pair among {Q^{i,f}, P_{mu,g}, eta_0, H omega}; values and,
/// where a closed expression is known, the comparison flag.
std::vector<BracketEntry> bracket_table(const Chart& chart, const Expr& hamiltonian,
                                        const BracketTableInputs& inputs);

const char* to_string(TableFlag flag);

}  // namespace pataplectic
