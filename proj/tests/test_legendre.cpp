#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "generators.hpp"
#include "pataplectic/legendre.hpp"
#include "pataplectic/models.hpp"

using namespace pataplectic;

namespace {

struct Sample {
  std::vector<double> q;
  std::vector<double> v;
  double w = 0;
};

Sample random_sample(gen::Rng& rng, const LagrangianModel& model, double spread = 0.8) {
  const Chart& c = model.chart();
  Sample s;
  for (int mu = 0; mu < c.n() + c.k(); ++mu) s.q.push_back(rng.real(-spread, spread));
  for (int a = 0; a < model.velocity_count(); ++a) s.v.push_back(rng.real(-spread, spread));
  s.w = rng.real(-1, 1);
  return s;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ScalarFieldModel curved_two_field_model() {
  Chart weyl = Chart::weyl(3, 2);
  Expr x1 = weyl.sym(0), x2 = weyl.sym(1);
  Expr y1 = weyl.sym(weyl.y(0)), y2 = weyl.sym(weyl.y(1));
  ExprMatrix g(3, 3);
  g(0, 0) = Expr(2) + x2 * x2;
  g(1, 1) = Expr(1);
  g(2, 2) = Expr(1) + x1 * x1;
  g(0, 1) = g(1, 0) = Expr(Rational(1, 3));
  Expr v = y1 * y1 * y2 + Expr(Rational(1, 4)) * y2.pow(4);
  return build_scalar_model(weyl, g, v);
}

void round_trip(const LagrangianModel& model, const HamiltonianModel& ham, std::uint64_t seed,
                const std::function<std::map<int, double>(const std::vector<double>&)>& higher = {}) {
  gen::Rng rng(seed);
  double worst_v = 0, worst_w = 0;
  for (int t = 0; t < 500; ++t) {
    Sample s = random_sample(rng, model);
    auto coords = legendre_forward(model, s.q, s.v, s.w, higher ? higher(s.q) : std::map<int, double>{});
    InvertResult inv = legendre_invert(model, coords);
    worst_v = std::max(worst_v, max_diff(inv.velocity, s.v));
    worst_w = std::max(worst_w, std::abs(ham.value(coords) - s.w));
  }
  CHECK(worst_v <= 1e-10);
  CHECK(worst_w <= 1e-10);
}

}  // namespace

TEST_CASE("forward map of a free field at rest is zero") {
  Chart c = Chart::weyl(2, 1);
  Expr l;
  for (int a = 0; a < 2; ++a) l += Expr(Rational(1, 2)) * c.sym(c.velocity(0, a)).pow(2);
  LagrangianModel model(c, l);
  CHECK(model.quadratic());
  auto coords = legendre_forward(model, std::vector<double>{0.3, 0.1, 0.7}, std::vector<double>{0, 0}, 0);
  for (int s = c.n() + c.k(); s < c.dim(); ++s) CHECK(coords[static_cast<std::size_t>(s)] == 0.0);
}

TEST_CASE("Klein-Gordon forward map: time momentum is the time derivative") {
  ScalarFieldModel kg = klein_gordon_preset();
  const Chart& c = kg.chart;
  std::vector<double> q{0.2, -0.4, 0.5};
  std::vector<double> v{1.25, -0.5};
  auto coords = legendre_forward(kg.lagrangian, q, v, 0.0);
  int p0 = *c.momentum_symbol({0}, {0});
  int p1 = *c.momentum_symbol({1}, {0});
  CHECK(coords[static_cast<std::size_t>(p0)] == doctest::Approx(1.25));
  CHECK(coords[static_cast<std::size_t>(p1)] == doctest::Approx(0.5));
  double l = 0.5 * (1.25 * 1.25 - 0.25) - 0.5 * 0.25;
  double eps = l - (1.25 * 1.25 + 0.5 * -0.5);
  CHECK(coords[static_cast<std::size_t>(c.eps())] == doctest::Approx(eps));
}

TEST_CASE("symbolic forward map of the scalar model") {
  ScalarFieldModel m = curved_two_field_model();
  auto exprs = legendre_forward_expressions(m.lagrangian);
  const Chart& c = m.chart;
  for (int i = 0; i < 2; ++i)
    for (int a = 0; a < 3; ++a) {
      Expr want;
      for (int b = 0; b < 3; ++b) want += m.inverse_metric(a, b) * c.sym(c.velocity(i, b));
      CHECK(is_zero_value(exprs.at(*c.momentum_symbol({a}, {i})) - want));
    }
}

TEST_CASE("round trip for quadratic models on 500 random points") {
  SUBCASE("Klein-Gordon") {
    ScalarFieldModel kg = klein_gordon_preset();
    round_trip(kg.lagrangian, kg.hamiltonian, 1);
  }
  SUBCASE("curved metric, two fields, three dimensions") {
    ScalarFieldModel m = curved_two_field_model();
    round_trip(m.lagrangian, m.hamiltonian, 2);
  }
  SUBCASE("string with a b-field, on the submanifold R") {
    Chart base(2, 2, {0, 1, 2});
    Expr y1 = base.sym(base.y(0)), y2 = base.sym(base.y(1));
    ExprMatrix h(2, 2), b(2, 2), g(2, 2);
    h(0, 0) = Expr(1) + y2 * y2;
    h(1, 1) = Expr(1);
    b(0, 1) = Expr(Rational(1, 2)) * y1;
    b(1, 0) = -b(0, 1);
    g(0, 0) = Expr(1);
    g(1, 1) = Expr(1) + base.sym(0) * base.sym(0);
    StringModel s = build_string_model(base, g, h, b);
    round_trip(s.lagrangian, s.hamiltonian, 3, [&](const std::vector<double>& q) { return s.R_momenta(q); });
  }
  SUBCASE("mechanics limit n = 1") {
    Chart c = Chart::weyl(1, 2);
    Expr l = Expr(Rational(1, 2)) * (c.sym(c.velocity(0, 0)).pow(2) + Expr(3) * c.sym(c.velocity(1, 0)).pow(2)) -
             c.sym(c.y(0)) * c.sym(c.y(1));
    LagrangianModel model(c, l);
    HamiltonianModel ham = build_hamiltonian(model);
    round_trip(model, ham, 4);
  }
}

TEST_CASE("Hamiltonians depend on eps with unit slope") {
  ScalarFieldModel kg = klein_gordon_preset();
  CHECK(kg.hamiltonian.expression().diff(kg.chart.eps()) == Expr(1));
  ScalarFieldModel m = curved_two_field_model();
  CHECK(m.hamiltonian.expression().diff(m.chart.eps()) == Expr(1));
  StringModel s = harmonic_map_preset(1);
  CHECK(s.hamiltonian.expression().diff(s.chart.eps()) == Expr(1));
  gen::Rng rng(8);
  StringModel s2 = harmonic_map_preset(2);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> coords(static_cast<std::size_t>(s2.chart.dim()));
    for (auto& x : coords) x = rng.real(-0.5, 0.5);
    CHECK(s2.hamiltonian.gradient(coords)[static_cast<std::size_t>(s2.chart.eps())] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("Hamiltonian tensor is minus the stress-energy tensor at linked points") {
  auto check_model = [](const LagrangianModel& model, const HamiltonianModel& ham, std::uint64_t seed) {
    gen::Rng rng(seed);
    double worst = 0;
    for (int t = 0; t < 200; ++t) {
      Sample s = random_sample(rng, model);
      auto coords = legendre_forward(model, s.q, s.v, 0.0);
      Eigen::MatrixXd h = hamiltonian_tensor(ham, coords);
      Eigen::MatrixXd st = stress_energy_tensor(model, s.q, s.v);
      worst = std::max(worst, (h + st).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-10);
  };
  ScalarFieldModel kg = klein_gordon_preset(3);
  check_model(kg.lagrangian, kg.hamiltonian, 5);
  ScalarFieldModel m = curved_two_field_model();
  check_model(m.lagrangian, m.hamiltonian, 6);
}

TEST_CASE("Hamiltonian tensor of a free field at zero momenta is diagonal") {
  ScalarFieldModel kg = klein_gordon_preset(2);
  const Chart& c = kg.chart;
  std::vector<double> coords(static_cast<std::size_t>(c.dim()), 0.0);
  coords[static_cast<std::size_t>(c.y(0))] = 0.6;
  coords[static_cast<std::size_t>(c.eps())] = -0.2;
  Eigen::MatrixXd h = hamiltonian_tensor(kg.hamiltonian, coords);
  // <p, d_beta in slot alpha> contributes eps, leaving V on the diagonal.
  double expected = 0.5 * 0.36;
  CHECK(h(0, 0) == doctest::Approx(expected));
  CHECK(h(1, 1) == doctest::Approx(expected));
  CHECK(h(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("mechanics limit: H equals p v - L") {
  Chart c = Chart::weyl(1, 1);
  Expr v = c.sym(c.velocity(0, 0)), y = c.sym(c.y(0));
  LagrangianModel model(c, Expr(Rational(1, 2)) * v * v - Expr(Rational(1, 2)) * y * y);
  HamiltonianModel ham = build_hamiltonian(model);
  std::vector<double> q{0.1, 0.4};
  std::vector<double> vel{0.7};
  auto coords = legendre_forward(model, q, vel, 0.0);
  double l = 0.5 * 0.49 - 0.5 * 0.16;
  CHECK(hamiltonian_tensor(ham, coords)(0, 0) == doctest::Approx(0.7 * 0.7 - l));
}

TEST_CASE("dH matches the velocity minors and -dL/dq") {
  gen::Rng rng(12);
  auto check_model = [&](const LagrangianModel& model, const HamiltonianModel& ham) {
    for (int t = 0; t < 30; ++t) {
      Sample s = random_sample(rng, model, 0.5);
      auto coords = legendre_forward(model, s.q, s.v, 0.0);
      DHReport r = verify_dH(ham, coords);
      CHECK(r.momentum_residual <= 1e-10);
      CHECK(r.position_residual <= 1e-10);
      CHECK(r.eps_residual <= 1e-12);
    }
  };
  ScalarFieldModel m = curved_two_field_model();
  check_model(m.lagrangian, m.hamiltonian);
  StringModel s = harmonic_map_preset(2);
  for (int t = 0; t < 30; ++t) {
    Sample smp = random_sample(rng, s.lagrangian, 0.5);
    auto coords = legendre_forward(s.lagrangian, smp.q, smp.v, 0.0, s.R_momenta(smp.q));
    DHReport r = verify_dH(s.hamiltonian, coords);
    CHECK(r.momentum_residual <= 1e-10);
    CHECK(r.position_residual <= 1e-10);
  }
}

TEST_CASE("Newton inversion for a non-quadratic Lagrangian") {
  Chart c = Chart::weyl(2, 1);
  Expr v0 = c.sym(c.velocity(0, 0)), v1 = c.sym(c.velocity(0, 1)), y = c.sym(c.y(0));
  Expr l = Expr(Rational(1, 2)) * (v0 * v0 + v1 * v1) + Expr(Rational(1, 12)) * v0.pow(4) + y * v1 * v0;
  LagrangianModel model(c, l);
  CHECK_FALSE(model.quadratic());
  HamiltonianModel ham = build_hamiltonian(model);
  CHECK_FALSE(ham.has_expression());
  gen::Rng rng(21);
  for (int t = 0; t < 100; ++t) {
    Sample s = random_sample(rng, model, 0.6);
    auto coords = legendre_forward(model, s.q, s.v, s.w);
    InvertResult inv = legendre_invert(model, coords);
    CHECK(inv.residual <= 1e-12);
    CHECK(max_diff(inv.velocity, s.v) <= 1e-10);
    for (std::size_t i = 1; i < inv.residual_history.size(); ++i)
      CHECK(inv.residual_history[i] <= inv.residual_history[i - 1]);
    CHECK(ham.value(coords) == doctest::Approx(s.w).epsilon(1e-10));
  }
  Sample s = random_sample(rng, model, 0.6);
  auto coords = legendre_forward(model, s.q, s.v, 0.0);
  InvertOptions opts;
  opts.max_iter = 1;
  opts.tol = 1e-15;
  CHECK_THROWS_AS(legendre_invert(model, coords, opts), NoConvergence);
}

TEST_CASE("a Lagrangian linear in the velocities is degenerate everywhere") {
  Chart c = Chart::weyl(2, 1);
  Expr l = c.sym(c.velocity(0, 0)) + c.sym(c.y(0)) * c.sym(c.velocity(0, 1));
  LagrangianModel model(c, l);
  std::vector<double> coords(static_cast<std::size_t>(c.dim()), 0.3);
  CHECK_THROWS_AS(legendre_invert(model, coords), SingularHessian);
  CHECK_THROWS_AS(build_hamiltonian(model), SingularHessian);
  gen::Rng rng(2);
  std::vector<std::vector<double>> samples;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> p(static_cast<std::size_t>(c.dim()));
    for (auto& x : p) x = rng.real(-1, 1);
    samples.push_back(p);
  }
  auto report = check_legendre_condition(model, samples);
  CHECK(report.fraction_in_domain == 0.0);
}

TEST_CASE("a Riemannian scalar model is invertible on every sample") {
  ScalarFieldModel m = curved_two_field_model();
  gen::Rng rng(31);
  std::vector<std::vector<double>> samples;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> p(static_cast<std::size_t>(m.chart.dim()));
    for (auto& x : p) x = rng.real(-1, 1);
    samples.push_back(p);
  }
  auto report = check_legendre_condition(m.lagrangian, samples);
  CHECK(report.fraction_in_domain == 1.0);
  for (const auto& v : report.points) CHECK(v.condition < 1e3);
}

TEST_CASE("condition number of a singular matrix is infinite") {
  Eigen::MatrixXd m(2, 2);
  m << 1, 2, 2, 4;
  CHECK(std::isinf(condition_number(m)));
  CHECK(condition_number(Eigen::MatrixXd::Identity(3, 3)) == doctest::Approx(1.0));
}
