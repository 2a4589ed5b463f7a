#include "pataplectic/identities.hpp"

#include <functional>
#include <sstream>

#include "pataplectic/parallel.hpp"

namespace pataplectic {

std::uint64_t ObservableSampler::next() {
  // splitmix64: fixed output on every platform.
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

int ObservableSampler::integer(int lo, int hi) {
  return lo + static_cast<int>(next() % static_cast<std::uint64_t>(hi - lo + 1));
}

std::uint64_t ObservableSampler::next_seed() { return next(); }

Expr ObservableSampler::polynomial(const std::vector<int>& symbols, int max_degree, int max_terms) {
  Expr out;
  const int terms = integer(1, max_terms);
  for (int t = 0; t < terms; ++t) {
    int c = integer(-3, 3);
    if (c == 0) c = 1;
    Expr term(c);
    const int degree = integer(0, max_degree);
    for (int d = 0; d < degree && !symbols.empty(); ++d)
      term *= Expr::symbol(symbols[static_cast<std::size_t>(integer(0, static_cast<int>(symbols.size()) - 1))]);
    out += term;
  }
  return out;
}

namespace {

std::vector<int> ids(int lo, int hi) {
  std::vector<int> v;
  for (int i = lo; i < hi; ++i) v.push_back(i);
  return v;
}

}  // namespace

Expr ObservableSampler::base_function() {
  Expr g;
  while (g.is_zero()) g = polynomial(ids(0, chart_.n()));
  return g;
}

std::vector<Expr> ObservableSampler::base_vector() {
  std::vector<Expr> f;
  for (int a = 0; a < chart_.n(); ++a) f.push_back(polynomial(ids(0, chart_.n())));
  return f;
}

ObservableForm ObservableSampler::position() {
  return ObservableForm::position(integer(0, chart_.k() - 1), base_vector());
}

ObservableForm ObservableSampler::momentum() {
  return ObservableForm::momentum(integer(0, chart_.n() + chart_.k() - 1), base_function());
}

ObservableForm ObservableSampler::field_momentum() {
  return ObservableForm::momentum(chart_.y(integer(0, chart_.k() - 1)), base_function());
}

ObservableForm ObservableSampler::base_momentum() {
  return ObservableForm::momentum(chart_.x(integer(0, chart_.n() - 1)), base_function());
}

ObservableForm ObservableSampler::generalized_position() {
  std::vector<ZetaEntry> zeta;
  const auto& momenta = chart_.momenta();
  const int entries = integer(1, 3);
  const auto q = ids(0, chart_.n() + chart_.k());
  for (int e = 0; e < entries; ++e) {
    const Momentum& m = momenta[static_cast<std::size_t>(integer(0, static_cast<int>(momenta.size()) - 1))];
    int c = m.sorted[static_cast<std::size_t>(integer(0, chart_.n() - 1))];
    zeta.push_back({m.sorted, c, polynomial(q)});
  }
  return ObservableForm::generalized_position(zeta);
}

ObservableForm ObservableSampler::generalized_momentum() {
  const auto q = ids(0, chart_.n() + chart_.k());
  std::vector<Expr> xi;
  for (std::size_t mu = 0; mu < q.size(); ++mu) xi.push_back(integer(0, 2) == 0 ? Expr() : polynomial(q));
  return ObservableForm::generalized_momentum(xi);
}

ObservableForm ObservableSampler::any() {
  switch (integer(0, 3)) {
    case 0:
      return position();
    case 1:
      return momentum();
    case 2:
      return generalized_position();
    default:
      return generalized_momentum();
  }
}

Expr ObservableSampler::hamiltonian() {
  std::vector<int> others;
  for (int s = 0; s < chart_.dim(); ++s)
    if (s != chart_.eps()) others.push_back(s);
  return chart_.sym(chart_.eps()) + polynomial(others, 2, 4);
}

namespace {

struct Outcome {
  bool ok = true;
  double residual = 0;
  std::string detail;
};

Outcome zero_form(const DifferentialForm& a, const Chart& chart) {
  if (is_zero_form(a)) return {};
  return {false, form_residual(a), to_string(a, chart)};
}

Outcome zero_field(const VectorField& v, const Chart& chart) {
  if (is_zero_field(v)) return {};
  return {false, 1.0, to_string(v, chart)};
}

IdentityCheck run_check(const std::string& name, const Chart& chart, std::uint64_t seed, int instances,
                        const std::function<Outcome(ObservableSampler&)>& body) {
  std::vector<Outcome> results(static_cast<std::size_t>(instances));
  std::uint64_t base = seed;
  for (char c : name) base = base * 1099511628211ULL + static_cast<unsigned char>(c);
  parallel_for(results.size(), [&](std::size_t i) {
    ObservableSampler sampler(chart, base + 0x632be59bd9b4e019ULL * (i + 1));
    try {
      results[i] = body(sampler);
    } catch (const std::exception& e) {
      results[i] = {false, 0, std::string("exception: ") + e.what()};
    }
  });
  IdentityCheck check;
  check.name = name;
  check.instances = instances;
  for (const auto& r : results) {
    if (!r.ok) {
      if (check.failures == 0) check.first_failure = r.detail;
      ++check.failures;
    }
    check.max_residual = std::max(check.max_residual, r.residual);
  }
  return check;
}

DifferentialForm bracket_with(const DifferentialForm& omega, const VectorField& xa, const VectorField& xb) {
  return interior(xb, interior(xa, omega));
}

}  // namespace

std::vector<IdentityCheck> run_identity_suite(const Chart& chart, std::uint64_t seed, int instances) {
  const DifferentialForm omega = pataplectic_form(chart);
  const DifferentialForm theta = cartan_form(chart);
  const int dim = chart.dim();
  std::vector<IdentityCheck> out;

  auto closed = [&](const ObservableForm& a) {
    auto v = xi_closed_form(chart, a);
    if (!v) throw std::logic_error("no closed form for " + a.label);
    return *v;
  };

  out.push_back(run_check("xi.generalized_position", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.generalized_position();
    return zero_form(exterior_derivative(a.expand(chart)) + interior(closed(a), omega), chart);
  }));
  out.push_back(run_check("xi.generalized_momentum", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.generalized_momentum();
    return zero_form(exterior_derivative(a.expand(chart)) + interior(closed(a), omega), chart);
  }));
  out.push_back(run_check("xi.position_form", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.position();
    return zero_form(exterior_derivative(a.expand(chart)) + interior(closed(a), omega), chart);
  }));
  out.push_back(run_check("xi.momentum_form", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.momentum();
    return zero_form(exterior_derivative(a.expand(chart)) + interior(closed(a), omega), chart);
  }));
  out.push_back(run_check("bracket.closure", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.any();
    ObservableForm b = s.any();
    VectorField xa = xi_of(chart, a).field;
    VectorField xb = xi_of(chart, b).field;
    DifferentialForm br = bracket_with(omega, xa, xb);
    return zero_form(exterior_derivative(br) + interior(lie_bracket(xa, xb), omega), chart);
  }));
  out.push_back(run_check("bracket.xi_homomorphism", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.any();
    ObservableForm b = s.any();
    VectorField xa = xi_of(chart, a).field;
    VectorField xb = xi_of(chart, b).field;
    VectorField xab = xi_solve(chart, bracket_with(omega, xa, xb));
    return zero_field(xab - lie_bracket(xa, xb), chart);
  }));
  out.push_back(run_check("bracket.antisymmetry", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.any();
    ObservableForm b = s.any();
    return zero_form(pbracket_internal(chart, a, b) + pbracket_internal(chart, b, a), chart);
  }));
  out.push_back(run_check("jacobi.commutator", chart, seed, instances, [&](ObservableSampler& s) {
    VectorField xa = xi_of(chart, s.any()).field;
    VectorField xb = xi_of(chart, s.any()).field;
    VectorField xc = xi_of(chart, s.any()).field;
    VectorField cyc = lie_bracket(xa, lie_bracket(xb, xc)) + lie_bracket(xb, lie_bracket(xc, xa)) +
                      lie_bracket(xc, lie_bracket(xa, xb));
    return zero_field(cyc, chart);
  }));
  out.push_back(run_check("jacobi.closed", chart, seed, instances, [&](ObservableSampler& s) {
    VectorField xa = xi_of(chart, s.any()).field;
    VectorField xb = xi_of(chart, s.any()).field;
    VectorField xc = xi_of(chart, s.any()).field;
    DifferentialForm cyc = bracket_with(omega, xa, lie_bracket(xb, xc)) +
                           bracket_with(omega, xb, lie_bracket(xc, xa)) +
                           bracket_with(omega, xc, lie_bracket(xa, xb));
    return zero_form(exterior_derivative(cyc), chart);
  }));
  out.push_back(run_check("table.generalized_qq", chart, seed, instances, [&](ObservableSampler& s) {
    return zero_form(pbracket_internal(chart, s.generalized_position(), s.generalized_position()), chart);
  }));
  out.push_back(run_check("table.generalized_pp", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.generalized_momentum();
    ObservableForm b = s.generalized_momentum();
    VectorField xi(dim, 1), xt(dim, 1);
    for (std::size_t mu = 0; mu < a.xi.size(); ++mu) {
      xi.add({static_cast<int>(mu)}, a.xi[mu]);
      xt.add({static_cast<int>(mu)}, b.xi[mu]);
    }
    DifferentialForm expected =
        interior(lie_bracket(xi, xt), theta) + exterior_derivative(interior(xt, interior(xi, theta)));
    return zero_form(pbracket_internal(chart, a, b) - expected, chart);
  }));
  out.push_back(run_check("table.generalized_pq", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.generalized_momentum();
    ObservableForm b = s.generalized_position();
    VectorField xi(dim, 1);
    for (std::size_t mu = 0; mu < a.xi.size(); ++mu) xi.add({static_cast<int>(mu)}, a.xi[mu]);
    // sum_I c_I xi ⌟ dq^I with -c_I the d/dp_I coefficient of Xi(Q^zeta).
    VectorField xq = closed(b);
    DifferentialForm expected(dim, chart.n() - 1);
    for (const auto& m : chart.momenta()) {
      Expr c = xq.coeff({m.symbol});
      if (c.is_zero()) continue;
      DifferentialForm dq(dim, chart.n());
      dq.add(m.sorted, Expr(1));
      expected -= (m.sign > 0 ? c : -c) * interior(xi, dq);
    }
    return zero_form(pbracket_internal(chart, a, b) - expected, chart);
  }));
  out.push_back(run_check("table.qq", chart, seed, instances, [&](ObservableSampler& s) {
    return zero_form(pbracket_internal(chart, s.position(), s.position()), chart);
  }));
  out.push_back(run_check("table.pp_fields", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.field_momentum();
    ObservableForm b = s.field_momentum();
    DifferentialForm expected = exterior_derivative(
        (a.weight * b.weight) *
        interior(VectorField::basis(dim, b.coordinate), interior(VectorField::basis(dim, a.coordinate), theta)));
    return zero_form(pbracket_internal(chart, a, b) - expected, chart);
  }));
  out.push_back(run_check("table.pq_fields", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.field_momentum();
    ObservableForm b = s.position();
    DifferentialForm expected(dim, chart.n() - 1);
    if (a.coordinate == chart.y(b.field))
      for (int al = 0; al < chart.n(); ++al)
        expected += (b.f[static_cast<std::size_t>(al)] * a.weight) * volume_contraction(chart, {al});
    return zero_form(pbracket_internal(chart, a, b) - expected, chart);
  }));
  out.push_back(run_check("omega_symmetry", chart, seed, instances, [&](ObservableSampler& s) {
    return zero_form(lie_derivative(xi_of(chart, s.any()).field, omega), chart);
  }));
  out.push_back(run_check("noether.identity", chart, seed, instances, [&](ObservableSampler& s) {
    Expr h = s.hamiltonian();
    ObservableForm a = s.generalized_momentum();
    VectorField xi(dim, 1);
    for (std::size_t mu = 0; mu < a.xi.size(); ++mu) xi.add({static_cast<int>(mu)}, a.xi[mu]);
    DifferentialForm h_omega = h * base_volume(chart);
    VectorField big = xi_of(chart, a).field;
    DifferentialForm lhs = pbracket_external(chart, h_omega, a);
    DifferentialForm rhs = lie_derivative(big, theta - h_omega) + exterior_derivative(interior(xi, h_omega));
    return zero_form(lhs - rhs, chart);
  }));
  return out;
}

std::vector<IdentityCheck> run_admissibility_suite(const Chart& chart, std::uint64_t seed, int instances) {
  const int dim = chart.dim();
  std::vector<IdentityCheck> out;

  auto admissible = [&](const ObservableForm& a) -> Outcome {
    AdmissibilityVerdict v = is_admissible(chart, a);
    if (v.admissible) return {};
    return {false, 1.0, a.label + " rejected along " + chart.name(v.beta)};
  };
  out.push_back(run_check("admissibility.position_admissible", chart, seed, instances,
                          [&](ObservableSampler& s) { return admissible(s.position()); }));
  out.push_back(run_check("admissibility.field_momentum_admissible", chart, seed, instances,
                          [&](ObservableSampler& s) { return admissible(s.field_momentum()); }));
  out.push_back(run_check("admissibility.base_momentum_rejected", chart, seed, instances, [&](ObservableSampler& s) {
    ObservableForm a = s.base_momentum();
    AdmissibilityVerdict v = is_admissible(chart, a);
    if (v.admissible) return Outcome{false, 1.0, "base momentum accepted"};
    if (v.beta != a.coordinate || !is_zero_value(v.component - a.weight))
      return Outcome{false, 1.0, "witness does not match the weight"};
    return Outcome{};
  }));

  auto admissible_sample = [&](ObservableSampler& s) {
    switch (s.integer(0, 2)) {
      case 0:
        return s.position();
      case 1:
        return s.field_momentum();
      default:
        return s.generalized_position();
    }
  };
  out.push_back(run_check("hamiltonian_nvector", chart, seed, instances, [&](ObservableSampler& s) {
    Expr h = s.hamiltonian();
    return zero_form(hamiltonian_nvector_defect(chart, h, hamiltonian_nvector(chart, h, s.next_seed())), chart);
  }));
  out.push_back(run_check("admissibility.external_equals_omega", chart, seed, instances, [&](ObservableSampler& s) {
    Expr h = s.hamiltonian();
    ObservableForm a = admissible_sample(s);
    DifferentialForm ext = pbracket_external(chart, h * base_volume(chart), a);
    DifferentialForm om = omega_bracket(chart, h, a.expand(chart), s.next_seed());
    return zero_form(ext - om, chart);
  }));
  out.push_back(run_check("admissibility.x_independence", chart, seed, instances, [&](ObservableSampler& s) {
    Expr h = s.hamiltonian();
    ObservableForm a = admissible_sample(s);
    DifferentialForm lam = a.expand(chart);
    MultiVectorField x1 = hamiltonian_nvector(chart, h, s.next_seed());
    MultiVectorField x2 = hamiltonian_nvector(chart, h, s.next_seed());
    return zero_form(sharp(chart, x1, lam) - sharp(chart, x2, lam), chart);
  }));
  out.push_back(run_check("admissibility.x_dependence_detected", chart, seed, instances, [&](ObservableSampler& s) {
    Expr h = s.hamiltonian();
    DifferentialForm lam = s.base_momentum().expand(chart);
    MultiVectorField x1 = hamiltonian_nvector(chart, h, s.next_seed());
    MultiVectorField x2 = hamiltonian_nvector(chart, h, s.next_seed());
    if (is_zero_form(sharp(chart, x1, lam) - sharp(chart, x2, lam)))
      return Outcome{false, 0, "two completions agree on a base momentum"};
    bool threw = false;
    try {
      omega_bracket(chart, h, lam, s.next_seed());
    } catch (const NotAdmissible&) {
      threw = true;
    }
    return threw ? Outcome{} : Outcome{false, 0, "omega_bracket accepted a base momentum"};
  }));
  out.push_back(run_check("omega.y_example", chart, seed, instances, [&](ObservableSampler& s) {
    Expr h = s.hamiltonian();
    int i = s.integer(0, chart.k() - 1);
    DifferentialForm lam = DifferentialForm::scalar(dim, chart.sym(chart.y(i)));
    DifferentialForm expected(dim, 1);
    for (int a = 0; a < chart.n(); ++a) {
      int p = *chart.momentum_symbol({a}, {i});
      expected.add({chart.x(a)}, h.diff(p));
    }
    return zero_form(omega_bracket(chart, h, lam, s.next_seed()) - expected, chart);
  }));
  if (chart.momentum_degrees().contains(2) && chart.k() >= 2 && chart.n() >= 2) {
    out.push_back(run_check("omega.ydy_example", chart, seed, instances, [&](ObservableSampler& s) {
      Expr h = s.hamiltonian();
      int i = s.integer(0, chart.k() - 2);
      int j = s.integer(i + 1, chart.k() - 1);
      DifferentialForm lam = DifferentialForm::basis(dim, chart.y(j), chart.sym(chart.y(i)));
      DifferentialForm expected(dim, 2);
      for (int a = 0; a < chart.n(); ++a)
        for (int b = a + 1; b < chart.n(); ++b)
          expected.add({chart.x(a), chart.x(b)}, h.diff(*chart.momentum_symbol({a, b}, {i, j})));
      return zero_form(omega_bracket(chart, h, lam, s.next_seed()) - expected, chart);
    }));
  }
  return out;
}

}  // namespace pataplectic
