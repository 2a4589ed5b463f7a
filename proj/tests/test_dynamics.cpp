#include <cmath>
#include <cstdlib>

#include "doctest.h"
#include "pataplectic/dynamics.hpp"
#include "pataplectic/parallel.hpp"

using namespace pataplectic;

namespace {

Expr X(int a) { return Expr::symbol(a); }

LatticeSpec periodic_lattice(int nodes, double length, double horizon, double ratio) {
  double h = length / nodes;
  int steps = static_cast<int>(std::lround(horizon / (ratio * h)));
  LatticeSpec lat;
  lat.axes = {{steps + 1, horizon / steps, 0, Boundary::Fixed}, {nodes, h, 0, Boundary::Periodic}};
  return lat;
}

struct PlaneWave {
  DynamicsModel model = DynamicsModel::from(klein_gordon_preset(2, Rational(1)));
  Expr omega = sqrt(Expr(2));
  Expr phase = X(1) - omega * X(0);
  InitialData init{{cos(phase)}, {omega * sin(phase)}};
  Expr exact = cos(phase);
};

template <class F>
std::vector<double> ladder(LatticeSpec lat, int levels, const F& measure) {
  std::vector<double> out;
  for (int l = 0; l < levels; ++l) {
    out.push_back(measure(lat));
    lat = lat.refined();
  }
  return out;
}

struct ThreadOverride {
  std::string old;
  bool had;
  explicit ThreadOverride(const char* value) {
    const char* v = std::getenv("PATAPLECTIC_THREADS");
    had = v != nullptr;
    if (had) old = v;
    setenv("PATAPLECTIC_THREADS", value, 1);
  }
  ~ThreadOverride() {
    if (had) setenv("PATAPLECTIC_THREADS", old.c_str(), 1);
    else unsetenv("PATAPLECTIC_THREADS");
  }
};

StringModel lorentzian_string(int variant) {
  Chart chart(2, 2, {0, 1, 2});
  ExprMatrix g(2, 2);
  g(0, 0) = Expr(1);
  g(1, 1) = Expr(-1);
  Expr y1 = Expr::symbol(chart.y(0)), y2 = Expr::symbol(chart.y(1));
  ExprMatrix h = ExprMatrix::identity(2), b(2, 2);
  if (variant == 1) h(1, 1) = cos(y1).pow(2);
  if (variant == 2) {
    b(0, 1) = Expr(Rational(1, 2));
    b(1, 0) = -b(0, 1);
  }
  if (variant == 3) {
    b(0, 1) = y2;
    b(1, 0) = -y2;
  }
  return build_string_model(chart, g, h, b);
}

InitialData string_init() {
  Expr a(Rational(3, 10)), c2(Rational(1, 5)), c3(Rational(1, 10));
  return {{a * sin(X(1)), c2 * cos(X(1)) + c3 * sin(Expr(2) * X(1))}, {c3 * cos(X(1)), c2 * sin(X(1))}};
}

}  // namespace

TEST_CASE("lattice indexing, refinement and validation") {
  LatticeSpec lat;
  lat.axes = {{5, 0.1, 0, Boundary::Fixed}, {6, 0.2, 1.0, Boundary::Periodic}, {4, 0.3, 0, Boundary::Fixed}};
  CHECK(lat.node_count() == 120);
  CHECK(lat.slice_count() == 24);
  for (std::size_t node = 0; node < lat.node_count(); ++node) CHECK(lat.flat_index(lat.multi_index(node)) == node);
  auto x = lat.position(lat.flat_index({2, 3, 1}));
  CHECK(x[0] == doctest::Approx(0.2));
  CHECK(x[1] == doctest::Approx(1.6));
  CHECK(x[2] == doctest::Approx(0.3));
  auto r = lat.refined();
  CHECK(r.axes[0].nodes == 9);
  CHECK(r.axes[1].nodes == 12);
  CHECK(r.axes[2].nodes == 7);
  CHECK(r.axes[1].spacing == doctest::Approx(0.1));
  LatticeSpec bad = lat;
  bad.axes[1].nodes = 3;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("axes[1].nodes"), std::invalid_argument);
  bad = lat;
  bad.axes[2].spacing = 0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("axes[2].spacing"), std::invalid_argument);
}

TEST_CASE("plane wave converges to the exact travelling wave at second order") {
  PlaneWave pw;
  auto errors = ladder(periodic_lattice(32, 2 * M_PI, 1.0, 0.5), 3, [&](const LatticeSpec& lat) {
    return field_error(solve_dw(pw.model, lat, pw.init), pw.model.chart, {pw.exact});
  });
  CHECK(errors[2] < 5e-3);
  CHECK(convergence_order(errors) == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("massless plane wave matches d'Alembert") {
  auto model = DynamicsModel::from(klein_gordon_preset(2, Rational(1), Expr(0)));
  Expr phase = X(1) - X(0);
  InitialData init{{sin(phase)}, {-cos(phase)}};
  auto errors = ladder(periodic_lattice(32, 2 * M_PI, 1.0, 0.5), 3, [&](const LatticeSpec& lat) {
    return field_error(solve_dw(model, lat, init), model.chart, {sin(phase)});
  });
  CHECK(convergence_order(errors) == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("standing mode with fixed ends follows the Klein-Gordon dispersion") {
  auto model = DynamicsModel::from(klein_gordon_preset(2, Rational(1)));
  // kappa = 1 on [0, pi]; omega^2 = kappa^2 + m^2.
  Expr omega = sqrt(Expr(2));
  InitialData init{{sin(X(1))}, {Expr(0)}};
  Expr exact = cos(omega * X(0)) * sin(X(1));
  Expr wrong = cos(X(0)) * sin(X(1));
  std::vector<double> errors, wrong_errors;
  for (int nodes : {33, 65, 129}) {
    double h = M_PI / (nodes - 1);
    // At ratio 1/2 the leading dispersion terms cancel for omega^2 = 2, so
    // ratio 1/4 is used to see the generic second order.
    int steps = 4 * (nodes - 1);
    LatticeSpec lat;
    lat.axes = {{steps + 1, 0.25 * h, 0, Boundary::Fixed}, {nodes, h, 0, Boundary::Fixed}};
    auto traj = solve_dw(model, lat, init);
    errors.push_back(field_error(traj, model.chart, {exact}));
    wrong_errors.push_back(field_error(traj, model.chart, {wrong}));
  }
  CHECK(convergence_order(errors) == doctest::Approx(2.0).epsilon(0.15));
  CHECK(wrong_errors[2] > 0.1);
}

TEST_CASE("constant equilibrium stays constant and has exact diagnostics") {
  // V = (y^2 - 1)^2 / 4 has V'(1) = 0.
  Chart chart = Chart::weyl(2, 1);
  Expr y = Expr::symbol(chart.y(0));
  auto model = DynamicsModel::from(klein_gordon_preset(2, Rational(1), Expr(Rational(1, 4)) * (y * y - Expr(1)).pow(2)));
  InitialData init{{Expr(1)}, {Expr(0)}};
  auto lat = periodic_lattice(16, 2.0, 0.5, 0.5);
  for (auto traj : {solve_dw(model, lat, init), solve_el(model, lat, init)}) {
    for (std::size_t node = 0; node < lat.node_count(); ++node) CHECK(traj.at(node, chart.y(0)) == 1.0);
    CHECK(stress_energy(model, traj).max_residual == 0.0);
    auto s = stress_energy_at(model, traj, 5);
    CHECK(s(0, 0) == 0.0);
    CHECK(s(0, 1) == 0.0);
    auto t2 = verify_hamiltonian_flow(model, traj, ObservableForm::momentum(chart.y(0), Expr(1) + X(1)));
    CHECK(t2.max_residual == 0.0);
    // Zero field value of V: both actions are -int V = 0 here.
    auto act = action_consistency(model, traj);
    CHECK(act.difference < 1e-15);
  }
}

TEST_CASE("zero field: both action integrals equal -int V(0)") {
  Chart chart = Chart::weyl(2, 1);
  Expr y = Expr::symbol(chart.y(0));
  auto model = DynamicsModel::from(klein_gordon_preset(2, Rational(1), Expr(Rational(3, 2)) + y * y));
  InitialData init{{Expr(0)}, {Expr(0)}};
  auto lat = periodic_lattice(8, 2.0, 0.5, 0.5);
  auto traj = solve_dw(model, lat, init);
  auto act = action_consistency(model, traj);
  double volume = 2.0 * 0.5;
  CHECK(act.lagrangian_action == doctest::Approx(-1.5 * volume).epsilon(1e-12));
  CHECK(act.hamiltonian_action == doctest::Approx(-1.5 * volume).epsilon(1e-12));
}

TEST_CASE("DW and EL solvers agree at second order") {
  PlaneWave pw;
  auto d = ladder(periodic_lattice(32, 2 * M_PI, 1.0, 0.5), 3, [&](const LatticeSpec& lat) {
    return field_discrepancy(solve_dw(pw.model, lat, pw.init), solve_el(pw.model, lat, pw.init), pw.model.chart);
  });
  CHECK(convergence_order(d) == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("leapfrog trajectory satisfies the eliminated second-order stencil to rounding") {
  // y^{n+1} - 2 y^n + y^{n-1} = ht^2 [D_x D_x y - V'(y)] for Minkowski KG.
  PlaneWave pw;
  auto lat = periodic_lattice(24, 2 * M_PI, 0.5, 0.5);
  auto traj = solve_dw(pw.model, lat, pw.init);
  const int T = lat.axes[0].nodes, N = lat.axes[1].nodes;
  const double ht = lat.axes[0].spacing, h = lat.axes[1].spacing;
  int y = pw.model.chart.y(0);
  double worst = 0;
  for (int t = 1; t + 1 < T; ++t)
    for (int i = 0; i < N; ++i) {
      auto at = [&](int tt, int ii) { return traj.at(lat.flat_index({tt, (ii + N) % N}), y); };
      double lhs = at(t + 1, i) - 2 * at(t, i) + at(t - 1, i);
      double rhs = ht * ht * ((at(t, i + 1) - 2 * at(t, i) + at(t, i - 1)) / (h * h) - at(t, i));
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  CHECK(worst < 1e-14);
}

TEST_CASE("mechanics limit: n = 1 harmonic oscillator") {
  Chart chart = Chart::weyl(1, 1);
  ExprMatrix metric = ExprMatrix::identity(1);
  Expr y = Expr::symbol(chart.y(0));
  auto model = DynamicsModel::from(build_scalar_model(chart, metric, Expr(Rational(1, 2)) * y * y));
  InitialData init{{Expr(1)}, {Expr(0)}};
  std::vector<double> dw_err, el_err;
  for (int steps : {40, 80, 160}) {
    LatticeSpec lat;
    lat.axes = {{steps + 1, 4.0 / steps, 0, Boundary::Fixed}};
    dw_err.push_back(field_error(solve_dw(model, lat, init), chart, {cos(X(0))}));
    el_err.push_back(field_error(solve_el(model, lat, init), chart, {cos(X(0))}));
  }
  CHECK(convergence_order(dw_err) == doctest::Approx(2.0).epsilon(0.1));
  CHECK(convergence_order(el_err) >= 3.7);
  CHECK(el_err[2] < 1e-6);
}

TEST_CASE("trajectory carries Legendre-linked momenta and eps in the H = 0 gauge") {
  PlaneWave pw;
  auto lat = periodic_lattice(32, 2 * M_PI, 0.5, 0.5);
  const Chart& c = pw.model.chart;
  for (const auto& traj : {solve_dw(pw.model, lat, pw.init), solve_el(pw.model, lat, pw.init)}) {
    double worst = 0;
    for (std::size_t node = 0; node < lat.node_count(); ++node) {
      CHECK(std::abs(pw.model.hamiltonian.value(traj.node(node))) < 1e-13);
      double p0 = traj.at(node, *c.momentum_symbol({0}, {0}));
      double p1 = traj.at(node, *c.momentum_symbol({1}, {0}));
      double y = traj.at(node, c.y(0));
      double eps = traj.at(node, c.eps());
      worst = std::max(worst, std::abs(eps + 0.5 * p0 * p0 - 0.5 * p1 * p1 + 0.5 * y * y));
    }
    CHECK(worst < 1e-13);
  }
}

TEST_CASE("on-shell bracket residuals for P and Q, and the Stokes form") {
  PlaneWave pw;
  const Chart& c = pw.model.chart;
  auto P = ObservableForm::momentum(c.y(0), Expr(1) + X(1) * X(1) / Expr(10));
  auto Q = ObservableForm::position(0, {Expr(1), Expr(0)});
  auto lat0 = periodic_lattice(32, 2 * M_PI, 1.0, 0.5);
  std::vector<double> rp, rq;
  auto lat = lat0;
  for (int l = 0; l < 3; ++l) {
    auto traj = solve_dw(pw.model, lat, pw.init);
    rp.push_back(verify_hamiltonian_flow(pw.model, traj, P).max_residual);
    rq.push_back(verify_hamiltonian_flow(pw.model, traj, Q).max_residual);
    lat = lat.refined();
  }
  CHECK(convergence_order(rp) >= 1.7);
  // The nodal time momentum is the centred time difference of y, so the Q residual vanishes to rounding.
  for (double r : rq) CHECK(r < 1e-12);

  auto traj = solve_dw(pw.model, lat0, pw.init);
  int T = lat0.axes[0].nodes, N = lat0.axes[1].nodes;
  auto s = stokes_check(pw.model, traj, ObservableForm::momentum(c.y(0), Expr(1)), {T / 4, 0}, {3 * T / 4, N / 4});
  CHECK(s.difference < 1e-12);
  CHECK(std::abs(s.bulk) > 1e-3);
  auto sq = stokes_check(pw.model, traj, Q, {T / 4, 0}, {3 * T / 4, N / 4});
  CHECK(sq.difference < 1e-3);
  CHECK(std::abs(sq.bulk) > 1e-2);
}

TEST_CASE("on-shell bracket residual agrees with the symbolic external bracket") {
  PlaneWave pw;
  const Chart& c = pw.model.chart;
  auto traj = solve_dw(pw.model, periodic_lattice(16, 2 * M_PI, 0.5, 0.5), pw.init);
  auto a = ObservableForm::momentum(c.y(0), Expr(2) + X(1));
  DifferentialForm bracket = pbracket_external(c, ObservableForm::hamiltonian_density(pw.model.hamiltonian.expression()), a);
  DifferentialForm da = exterior_derivative(a.expand(c));
  auto r = verify_hamiltonian_flow(pw.model, traj, a);
  double worst = 0;
  for (std::size_t node = 0; node < traj.lattice.node_count(); ++node) {
    auto mi = traj.lattice.multi_index(node);
    if (mi[0] < 1 || mi[0] + 2 > traj.lattice.axes[0].nodes) continue;
    double lhs = pull_back(c, da, traj, node).at({0, 1});
    double rhs = pull_back(c, bracket, traj, node).at({0, 1});
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  CHECK(r.max_residual == doctest::Approx(worst).epsilon(1e-9));
}

TEST_CASE("omega-bracket residual for y and for base coordinates") {
  PlaneWave pw;
  const Chart& c = pw.model.chart;
  auto traj = solve_dw(pw.model, periodic_lattice(16, 2 * M_PI, 0.5, 0.5), pw.init);
  auto y = DifferentialForm::scalar(c.dim(), Expr::symbol(c.y(0)));
  CHECK(verify_omega_flow(pw.model, traj, y).max_residual < 1e-12);
  auto x = DifferentialForm::scalar(c.dim(), X(1));
  CHECK(verify_omega_flow(pw.model, traj, x).max_residual < 1e-14);
  auto not_admissible = DifferentialForm::scalar(c.dim(), Expr::symbol(*c.momentum_symbol({0}, {0})));
  CHECK_THROWS(verify_omega_flow(pw.model, traj, not_admissible));
}

TEST_CASE("stress-energy divergence converges for x-independent and x-dependent models") {
  PlaneWave pw;
  auto r = ladder(periodic_lattice(32, 2 * M_PI, 1.0, 0.5), 3, [&](const LatticeSpec& lat) {
    return stress_energy(pw.model, solve_dw(pw.model, lat, pw.init)).max_residual;
  });
  CHECK(convergence_order(r) >= 1.7);

  Chart chart = Chart::weyl(2, 1);
  Expr y = Expr::symbol(chart.y(0));
  auto xdep = DynamicsModel::from(
      klein_gordon_preset(2, Rational(1), Expr(Rational(1, 2)) * (Expr(1) + Expr(Rational(1, 2)) * sin(X(1))) * y * y));
  auto r2 = ladder(periodic_lattice(32, 2 * M_PI, 1.0, 0.5), 3, [&](const LatticeSpec& lat) {
    return stress_energy(xdep, solve_dw(xdep, lat, pw.init)).max_residual;
  });
  CHECK(convergence_order(r2) >= 1.7);
}

TEST_CASE("slice energy is the canonical Hamiltonian functional and drifts at second order") {
  PlaneWave pw;
  const Chart& c = pw.model.chart;
  auto lat = periodic_lattice(32, 2 * M_PI, 1.0, 0.5);
  auto traj = solve_dw(pw.model, lat, pw.init);
  int t = 3;
  double direct = 0;
  for (int i = 0; i < lat.axes[1].nodes; ++i) {
    std::size_t node = lat.flat_index({t, i});
    double pi = traj.at(node, *c.momentum_symbol({0}, {0}));
    double phix = node_jacobian(traj, node)(c.y(0), 1);
    double phi = traj.at(node, c.y(0));
    direct += lat.axes[1].spacing * (0.5 * pi * pi + 0.5 * phix * phix + 0.5 * phi * phi);
  }
  auto energy = slice_energy(pw.model, traj);
  CHECK(energy.extra[static_cast<std::size_t>(t)] == doctest::Approx(direct).epsilon(1e-12));
  auto drift = ladder(lat, 3, [&](const LatticeSpec& l) { return slice_energy(pw.model, solve_dw(pw.model, l, pw.init)).max_residual; });
  CHECK(convergence_order(drift) >= 1.7);
}

TEST_CASE("slice brackets recover the canonical pairing and the evolution laws") {
  PlaneWave pw;
  const Chart& c = pw.model.chart;
  auto lat = periodic_lattice(32, 2 * M_PI, 1.0, 0.5);
  auto traj = solve_dw(pw.model, lat, pw.init);
  Expr bump_f = exp(-(X(1) - Expr(3)).pow(2));
  Expr bump_g = exp(-(X(1) - Expr(2)).pow(2) / Expr(2));
  auto r = slice_bracket_check(pw.model, traj, {bump_f, X(1)}, bump_g, 5);
  CHECK(r.difference < 1e-10);
  CHECK(std::abs(r.expected) > 0.1);
  CHECK(r.qq_integral == 0.0);

  // f time dependent: the correction term is the slice integral of Q^{df/dt}.
  Expr profile = Expr(2) + sin(X(1));
  auto q = ObservableForm::position(0, {(Expr(1) + X(0)) * profile, Expr(0)});
  auto qt = ObservableForm::position(0, {profile, Expr(0)});
  auto p = ObservableForm::momentum(c.y(0), (Expr(1) + X(0) * X(0)) * profile);
  auto pt = ObservableForm::momentum(c.y(0), Expr(2) * X(0) * profile);
  std::vector<double> eq, ep;
  auto l = lat;
  for (int k = 0; k < 3; ++k) {
    auto tr = solve_dw(pw.model, l, pw.init);
    eq.push_back(slice_evolution(pw.model, tr, q, qt).max_residual);
    ep.push_back(slice_evolution(pw.model, tr, p, pt).max_residual);
    l = l.refined();
  }
  CHECK(eq[0] > 1e-8);
  CHECK(ep[0] > 1e-8);
  CHECK(convergence_order(eq) >= 1.7);
  CHECK(convergence_order(ep) >= 1.7);

  // Dropping the correction term leaves an O(1) mismatch.
  auto none = ObservableForm::position(0, {Expr(0), Expr(0)});
  CHECK(slice_evolution(pw.model, traj, q, none).max_residual > 1e-2);
}

TEST_CASE("Noether: ignorable field, time translation, explicit breaking") {
  Chart chart = Chart::weyl(2, 2);
  ExprMatrix metric(2, 2);
  metric(0, 0) = Expr(1);
  metric(1, 1) = Expr(-1);
  Expr y1 = Expr::symbol(chart.y(0)), y2 = Expr::symbol(chart.y(1));
  auto model = DynamicsModel::from(build_scalar_model(chart, metric, Expr(Rational(1, 2)) * y2 * y2));
  Expr omega = sqrt(Expr(2));
  InitialData init{{sin(X(1) - X(0)), cos(X(1) - omega * X(0))}, {-cos(X(1) - X(0)), omega * sin(X(1) - omega * X(0))}};
  std::vector<Expr> shift_y1 = {Expr(0), Expr(0), Expr(1), Expr(0)};
  std::vector<Expr> shift_t = {Expr(1), Expr(0), Expr(0), Expr(0)};
  std::vector<Expr> shift_y2 = {Expr(0), Expr(0), Expr(0), Expr(1)};
  std::vector<double> r1, rt;
  auto lat = periodic_lattice(32, 2 * M_PI, 1.0, 0.5);
  for (int l = 0; l < 3; ++l) {
    auto traj = solve_dw(model, lat, init);
    auto a = noether_check(model, traj, shift_y1);
    CHECK(a.symmetric);
    CHECK(a.identity_holds);
    r1.push_back(a.current_residual);
    auto b = noether_check(model, traj, shift_t);
    CHECK(b.symmetric);
    CHECK(b.identity_holds);
    rt.push_back(b.current_residual);
    if (l == 0) {
      auto broken = noether_check(model, traj, shift_y2);
      CHECK_FALSE(broken.symmetric);
      CHECK(broken.identity_holds);
      CHECK(broken.witness.find("y2") != std::string::npos);
    }
    lat = lat.refined();
  }
  CHECK(convergence_order(r1) >= 1.7);
  CHECK(convergence_order(rt) >= 1.7);
}

TEST_CASE("string: EL residual, solver agreement and action on flat and curved targets") {
  for (int variant : {0, 1}) {
    auto sm = lorentzian_string(variant);
    auto model = DynamicsModel::from(sm);
    std::vector<double> el, disc, act;
    auto lat = periodic_lattice(32, 2 * M_PI, 0.5, 0.25);
    for (int l = 0; l < 3; ++l) {
      auto dw = solve_dw(model, lat, string_init());
      auto ref = solve_el(model, lat, string_init());
      el.push_back(string_el_residual(sm, dw).max_residual);
      disc.push_back(field_discrepancy(dw, ref, model.chart));
      act.push_back(action_consistency(model, dw).difference);
      lat = lat.refined();
    }
    CHECK(convergence_order(el) >= 1.7);
    CHECK(convergence_order(disc) >= 1.7);
    CHECK(convergence_order(act) >= 1.7);
  }
}

TEST_CASE("string: flat target reduces to the wave equation per component") {
  auto sm = lorentzian_string(0);
  auto model = DynamicsModel::from(sm);
  Expr eps(Rational(1, 5));
  InitialData init{{eps * sin(X(1)), eps * cos(Expr(2) * X(1))}, {-eps * cos(X(1)), Expr(2) * eps * sin(Expr(2) * X(1))}};
  std::vector<Expr> exact = {eps * sin(X(1) - X(0)), eps * cos(Expr(2) * (X(1) - X(0)))};
  std::vector<double> err;
  auto lat = periodic_lattice(32, 2 * M_PI, 0.5, 0.25);
  for (int l = 0; l < 3; ++l) {
    auto traj = solve_dw(model, lat, init);
    double worst = field_error(traj, model.chart, exact);
    err.push_back(worst);
    lat = lat.refined();
  }
  CHECK(convergence_order(err) == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("string: b-field on a two-dimensional target leaves the EL equation unchanged") {
  auto plain = DynamicsModel::from(lorentzian_string(0));
  auto lat = periodic_lattice(32, 2 * M_PI, 0.5, 0.25);
  for (int variant : {2, 3}) {
    auto sm = lorentzian_string(variant);
    auto model = DynamicsModel::from(sm);
    std::vector<double> d, el;
    auto l = lat;
    for (int k = 0; k < 3; ++k) {
      auto with_b = solve_dw(model, l, string_init());
      d.push_back(field_discrepancy(with_b, solve_dw(plain, l, string_init()), model.chart));
      el.push_back(string_el_residual(sm, with_b).max_residual);
      l = l.refined();
    }
    CHECK(convergence_order(d) >= 1.7);
    CHECK(convergence_order(el) >= 1.7);
  }
}

TEST_CASE("string: trajectory stays on R and satisfies the first Hamilton equation") {
  auto sm = lorentzian_string(3);
  auto model = DynamicsModel::from(sm);
  auto traj = solve_dw(model, periodic_lattice(32, 2 * M_PI, 0.5, 0.25), string_init());
  int p12 = *model.chart.momentum_symbol({0, 1}, {0, 1});
  for (std::size_t node = 0; node < traj.lattice.node_count(); node += 7)
    CHECK(traj.at(node, p12) == doctest::Approx(traj.at(node, model.chart.y(1))).epsilon(1e-14));
  auto y1 = DifferentialForm::scalar(model.chart.dim(), Expr::symbol(model.chart.y(0)));
  auto r = ladder(periodic_lattice(16, 2 * M_PI, 0.5, 0.25), 3, [&](const LatticeSpec& lat) {
    return verify_omega_flow(model, solve_dw(model, lat, string_init()), y1).max_residual;
  });
  CHECK((r[2] < 1e-12 || convergence_order(r) >= 1.7));
  DifferentialForm ydy(model.chart.dim(), 1);
  ydy.add({model.chart.y(1)}, Expr::symbol(model.chart.y(0)));
  auto r2 = ladder(periodic_lattice(16, 2 * M_PI, 0.5, 0.25), 3, [&](const LatticeSpec& lat) {
    return verify_omega_flow(model, solve_dw(model, lat, string_init()), ydy).max_residual;
  });
  CHECK((r2[2] < 1e-12 || convergence_order(r2) >= 1.7));
}

TEST_CASE("string: singular M on the initial slice is rejected") {
  // h = diag(y1, 1) degenerates where y1 = 0.
  Chart chart(2, 2, {0, 1, 2});
  ExprMatrix g(2, 2);
  g(0, 0) = Expr(1);
  g(1, 1) = Expr(-1);
  ExprMatrix h = ExprMatrix::identity(2), b(2, 2);
  h(0, 0) = Expr(1) + Expr::symbol(chart.y(0));
  auto model = DynamicsModel::from(build_string_model(chart, g, h, b));
  InitialData init{{Expr(-1) + Expr(Rational(1, 10)) * sin(X(1)) * sin(X(1)), Expr(0)}, {Expr(0), Expr(0)}};
  CHECK_THROWS_AS(solve_dw(model, periodic_lattice(16, 2 * M_PI, 1.0, 0.25), init), NonHyperbolicInit);
}

TEST_CASE("blow-up is reported with a node") {
  // Euclidean-signature "evolution" is ill-posed and grows without bound.
  Chart chart = Chart::weyl(2, 1);
  Expr y = Expr::symbol(chart.y(0));
  auto model = DynamicsModel::from(klein_gordon_preset(2, Rational(1), Expr(-50) * y * y));
  InitialData init{{cos(X(1))}, {Expr(0)}};
  try {
    solve_dw(model, periodic_lattice(16, 2 * M_PI, 20.0, 0.5), init);
    FAIL("expected BlowUp");
  } catch (const BlowUp& e) {
    CHECK(e.node() > 0);
    CHECK(std::string(e.what()).find("node") != std::string::npos);
  }
}

TEST_CASE("solve_dw rejects unsupported models and mismatched lattices") {
  Chart chart = Chart::weyl(2, 1);
  ExprMatrix metric(2, 2);
  metric(0, 0) = Expr(1);
  metric(0, 1) = metric(1, 0) = Expr(Rational(1, 3));
  metric(1, 1) = Expr(-1);
  auto skew = DynamicsModel::from(build_scalar_model(chart, metric, Expr(0)));
  InitialData init{{Expr(0)}, {Expr(0)}};
  CHECK_THROWS_AS(solve_dw(skew, periodic_lattice(8, 1.0, 0.2, 0.5), init), std::invalid_argument);
  CHECK_NOTHROW(solve_el(skew, periodic_lattice(8, 1.0, 0.2, 0.5), init));
  auto kg = DynamicsModel::from(klein_gordon_preset(3, Rational(1)));
  CHECK_THROWS_AS(solve_dw(kg, periodic_lattice(8, 1.0, 0.2, 0.5), init), std::invalid_argument);
  auto kg2 = DynamicsModel::from(klein_gordon_preset(2, Rational(1)));
  InitialData wrong{{Expr::symbol(chart.y(0))}, {Expr(0)}};
  CHECK_THROWS_AS(solve_dw(kg2, periodic_lattice(8, 1.0, 0.2, 0.5), wrong), std::invalid_argument);
}

TEST_CASE("three-dimensional base runs with a fixed spatial axis") {
  auto model = DynamicsModel::from(klein_gordon_preset(3, Rational(1)));
  // Mode sin(x3) cos(x2 - w t) with w^2 = 1 + 1 + 1 vanishes on x3 = 0, pi.
  Expr w = sqrt(Expr(3));
  Expr exact = sin(X(2)) * cos(X(1) - w * X(0));
  InitialData init{{sin(X(2)) * cos(X(1))}, {w * sin(X(2)) * sin(X(1))}};
  std::vector<double> err;
  for (int l = 0; l < 2; ++l) {
    int nx = 12 << l, nz = (8 << l) + 1;
    double hx = 2 * M_PI / nx, hz = M_PI / (nz - 1);
    int steps = 6 << l;
    LatticeSpec lat;
    lat.axes = {{steps + 1, 0.4 / steps, 0, Boundary::Fixed},
                {nx, hx, 0, Boundary::Periodic},
                {nz, hz, 0, Boundary::Fixed}};
    auto dw = solve_dw(model, lat, init);
    err.push_back(field_error(dw, model.chart, {exact}));
    if (l == 0) CHECK(field_discrepancy(dw, solve_el(model, lat, init), model.chart) < 5e-3);
  }
  CHECK(err[1] < err[0] / 3);
}

TEST_CASE("trajectories are bit-identical across thread counts") {
  PlaneWave pw;
  auto lat = periodic_lattice(4096, 2 * M_PI, 0.01, 0.5);
  LatticeTrajectory a, b;
  {
    ThreadOverride one("1");
    a = solve_dw(pw.model, lat, pw.init);
  }
  {
    ThreadOverride many("4");
    b = solve_dw(pw.model, lat, pw.init);
  }
  CHECK(a.data == b.data);
  auto el_a = [&] {
    ThreadOverride one("1");
    return solve_el(pw.model, lat, pw.init);
  }();
  auto el_b = [&] {
    ThreadOverride many("3");
    return solve_el(pw.model, lat, pw.init);
  }();
  CHECK(el_a.data == el_b.data);
}

TEST_CASE("convergence order estimate") {
  CHECK(convergence_order({1.0, 0.25, 0.0625}) == doctest::Approx(2.0));
  CHECK(convergence_order({1.0, 0.5}) == doctest::Approx(1.0));
  CHECK(std::isinf(convergence_order({1.0, 0.0})));
  CHECK_THROWS(convergence_order({1.0}));
}
