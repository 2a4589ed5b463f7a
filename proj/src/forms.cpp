#include "pataplectic/forms.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace pataplectic {
namespace {

template <class Tag>
Graded<Tag> wedge_impl(const Graded<Tag>& a, const Graded<Tag>& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("chart mismatch in wedge");
  Graded<Tag> out(a.dim(), a.degree() + b.degree());
  if (out.degree() > a.dim()) return out;
  Index joined;
  for (const auto& [ka, ca] : a.terms()) {
    for (const auto& [kb, cb] : b.terms()) {
      joined = ka;
      joined.insert(joined.end(), kb.begin(), kb.end());
      Canonical c = canonicalize(joined, a.dim());
      if (c.sign == 0) continue;
      out.add(joined, ca * cb);
    }
  }
  return out;
}

std::string index_label(const Index& idx, const Chart& chart, const char* prefix) {
  std::string s;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) s += "^";
    s += prefix + chart.name(idx[i]);
  }
  return s;
}

}  // namespace

DifferentialForm wedge(const DifferentialForm& a, const DifferentialForm& b) { return wedge_impl(a, b); }
MultiVectorField wedge(const MultiVectorField& a, const MultiVectorField& b) { return wedge_impl(a, b); }

MultiVectorField wedge_factors(const std::vector<VectorField>& factors) {
  if (factors.empty()) throw std::invalid_argument("empty factor list");
  MultiVectorField out = factors.front();
  for (std::size_t i = 1; i < factors.size(); ++i) out = wedge(out, factors[i]);
  return out;
}

DifferentialForm interior(const MultiVectorField& x, const DifferentialForm& a) {
  if (x.dim() != a.dim()) throw std::invalid_argument("chart mismatch in interior product");
  if (x.degree() > a.degree()) throw std::invalid_argument("multivector degree exceeds form degree");
  DifferentialForm out(a.dim(), a.degree() - x.degree());
  Index ordered;
  Index rest;
  for (const auto& [kx, cx] : x.terms()) {
    for (const auto& [ka, ca] : a.terms()) {
      if (!std::includes(ka.begin(), ka.end(), kx.begin(), kx.end())) continue;
      rest.clear();
      std::set_difference(ka.begin(), ka.end(), kx.begin(), kx.end(), std::back_inserter(rest));
      ordered = kx;
      ordered.insert(ordered.end(), rest.begin(), rest.end());
      int sign = canonicalize(ordered, a.dim()).sign;
      out.add(rest, Expr(sign) * cx * ca);
    }
  }
  return out;
}

Expr pairing(const MultiVectorField& x, const DifferentialForm& a) {
  if (x.degree() != a.degree()) throw std::invalid_argument("pairing needs equal degrees");
  return interior(x, a).coeff(std::span<const int>());
}

DifferentialForm exterior_derivative(const DifferentialForm& a) {
  DifferentialForm out(a.dim(), a.degree() + 1);
  if (out.degree() > a.dim()) return out;
  Index joined;
  for (const auto& [k, c] : a.terms()) {
    for (int mu : c.symbols()) {
      if (mu >= a.dim()) continue;
      if (std::binary_search(k.begin(), k.end(), mu)) continue;
      joined.assign(1, mu);
      joined.insert(joined.end(), k.begin(), k.end());
      out.add(joined, c.diff(mu));
    }
  }
  return out;
}

DifferentialForm lie_derivative(const VectorField& xi, const DifferentialForm& a) {
  if (xi.degree() != 1) throw std::invalid_argument("Lie derivative needs a vector field");
  DifferentialForm result = interior(xi, exterior_derivative(a));
  if (a.degree() > 0) result += exterior_derivative(interior(xi, a));
  return result;
}

Expr apply(const VectorField& xi, const Expr& f) {
  Expr out;
  for (const auto& [k, c] : xi.terms()) {
    if (!f.depends_on(k[0])) continue;
    out += c * f.diff(k[0]);
  }
  return out;
}

VectorField lie_bracket(const VectorField& a, const VectorField& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("chart mismatch in Lie bracket");
  VectorField out(a.dim(), 1);
  for (int mu = 0; mu < a.dim(); ++mu) {
    Expr am = a.coeff({mu});
    Expr bm = b.coeff({mu});
    out.add({mu}, apply(a, bm) - apply(b, am));
  }
  return out;
}

DifferentialForm substitute(const DifferentialForm& a, const std::map<int, Expr>& values) {
  return a.map([&](const Expr& e) { return e.substitute(values); });
}

bool is_zero_form(const DifferentialForm& a, const ZeroTestOptions& opts) {
  for (const auto& [k, c] : a.terms())
    if (!is_zero_value(c, opts)) return false;
  return true;
}

bool is_zero_field(const MultiVectorField& a, const ZeroTestOptions& opts) {
  for (const auto& [k, c] : a.terms())
    if (!is_zero_value(c, opts)) return false;
  return true;
}

double form_residual(const DifferentialForm& a, const ZeroTestOptions& opts) {
  double worst = 0.0;
  for (const auto& [k, c] : a.terms()) worst = std::max(worst, numeric_residual(c, opts));
  return worst;
}

std::string to_string(const DifferentialForm& a, const Chart& chart) {
  if (a.empty()) return "0";
  std::ostringstream out;
  bool first = true;
  for (const auto& [k, c] : a.terms()) {
    if (!first) out << " + ";
    first = false;
    out << "(" << chart.print(c) << ")";
    if (!k.empty()) out << " " << index_label(k, chart, "d");
  }
  return out.str();
}

std::string to_string(const MultiVectorField& a, const Chart& chart) {
  if (a.empty()) return "0";
  std::ostringstream out;
  bool first = true;
  for (const auto& [k, c] : a.terms()) {
    if (!first) out << " + ";
    first = false;
    out << "(" << chart.print(c) << ")";
    if (!k.empty()) out << " " << index_label(k, chart, "d/d");
  }
  return out.str();
}

DifferentialForm base_volume(const Chart& chart) {
  DifferentialForm w(chart.dim(), chart.n());
  Index base(static_cast<std::size_t>(chart.n()));
  for (int a = 0; a < chart.n(); ++a) base[static_cast<std::size_t>(a)] = a;
  w.add(base, chart.volume_weight());
  return w;
}

DifferentialForm volume_contraction(const Chart& chart, const std::vector<int>& alphas) {
  DifferentialForm w = base_volume(chart);
  if (alphas.empty()) return w;
  std::vector<VectorField> factors;
  for (int a : alphas) factors.push_back(VectorField::basis(chart.dim(), chart.x(a)));
  return interior(wedge_factors(factors), w);
}

DifferentialForm cartan_form(const Chart& chart) {
  DifferentialForm theta(chart.dim(), chart.n());
  const Expr& g = chart.volume_weight();
  for (const auto& m : chart.momenta()) theta.add(m.slots, g * Expr::symbol(m.symbol));
  return theta;
}

DifferentialForm pataplectic_form(const Chart& chart) { return exterior_derivative(cartan_form(chart)); }

DifferentialForm cartan_form_unrestricted(const Chart& chart) {
  const int n = chart.n();
  const int dim = chart.dim();
  DifferentialForm omega = base_volume(chart);
  DifferentialForm theta = Expr::symbol(chart.eps()) * omega;
  // (dy^i ^ ∂_a) ⌟ w := dy^i ^ (∂_a ⌟ w)
  auto raise = [&](int i, int a, const DifferentialForm& w) {
    return wedge(DifferentialForm::basis(dim, chart.y(i)), interior(VectorField::basis(dim, chart.x(a)), w));
  };
  for (int p : chart.momentum_degrees()) {
    if (p == 0 || p > chart.k()) continue;
    std::vector<int> alphas(static_cast<std::size_t>(p));
    std::vector<int> fields(static_cast<std::size_t>(p));
    Rational weight(1);
    for (int j = 2; j <= p; ++j) weight *= Rational(j * j);
    weight = weight.reciprocal();
    auto visit_fields = [&](auto&& self, int pos) -> void {
      if (pos == p) {
        Canonical ca = canonicalize(alphas, n);
        Canonical cf = canonicalize(fields, chart.k());
        if (ca.sign == 0 || cf.sign == 0) return;
        int sym = *chart.momentum_symbol(ca.index, cf.index);
        DifferentialForm w = omega;
        for (int j = p - 1; j >= 0; --j)
          w = raise(fields[static_cast<std::size_t>(j)], alphas[static_cast<std::size_t>(j)], w);
        theta += (Expr(weight * Rational(ca.sign * cf.sign)) * Expr::symbol(sym)) * w;
        return;
      }
      for (int i = 0; i < chart.k(); ++i) {
        fields[static_cast<std::size_t>(pos)] = i;
        self(self, pos + 1);
      }
    };
    auto visit_alphas = [&](auto&& self, int pos) -> void {
      if (pos == p) {
        visit_fields(visit_fields, 0);
        return;
      }
      for (int a = 0; a < n; ++a) {
        alphas[static_cast<std::size_t>(pos)] = a;
        self(self, pos + 1);
      }
    };
    visit_alphas(visit_alphas, 0);
  }
  return theta;
}

}  // namespace pataplectic
