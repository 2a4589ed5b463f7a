#include "pataplectic/observables.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <sstream>

#include "pataplectic/parallel.hpp"

namespace pataplectic {
namespace {

void require_weyl_momenta(const Chart& chart) {
  if (!chart.momentum_degrees().contains(1)) throw std::invalid_argument("chart has no first-order momenta");
}

int momentum_p(const Chart& chart, int alpha, int field) {
  auto s = chart.momentum_symbol({alpha}, {field});
  if (!s) throw std::invalid_argument("chart has no first-order momenta");
  return *s;
}

/// d/dp_I for a sorted index I, expressed on the named momentum.
VectorField momentum_direction(const Chart& chart, const Index& sorted, const Expr& coeff) {
  VectorField v(chart.dim(), 1);
  const Momentum* m = chart.momentum_at(sorted);
  if (m == nullptr) return v;
  v.add({m->symbol}, m->sign > 0 ? coeff : -coeff);
  return v;
}

DifferentialForm omega_form(const Chart& chart) { return base_volume(chart); }

DifferentialForm scalar_form(const Chart& chart, const Expr& e) { return DifferentialForm::scalar(chart.dim(), e); }

std::vector<Index> combinations(int count, int size) {
  std::vector<Index> out;
  Index cur;
  auto rec = [&](auto&& self, int start) -> void {
    if (static_cast<int>(cur.size()) == size) {
      out.push_back(cur);
      return;
    }
    for (int i = start; i < count; ++i) {
      cur.push_back(i);
      self(self, i + 1);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

VectorField vector_from(const Chart& chart, const std::vector<Expr>& components) {
  VectorField v(chart.dim(), 1);
  for (std::size_t mu = 0; mu < components.size(); ++mu) v.add({static_cast<int>(mu)}, components[mu]);
  return v;
}

/// c_I = sum_a sum_nu d zeta^nu_{I[a -> nu]} / dq^{I_a}, the coefficient of
/// -d/dp_I in Xi(Q^zeta).
std::map<Index, Expr> zeta_divergence(const Chart& chart, const std::vector<ZetaEntry>& zeta) {
  std::map<std::pair<Index, int>, Expr> table;
  for (const auto& z : zeta) table[{z.momentum, z.coordinate}] += z.coeff;
  const int nq = chart.n() + chart.k();
  std::map<Index, Expr> out;
  for (const auto& m : chart.momenta()) {
    Expr c;
    for (int a = 0; a < chart.n(); ++a) {
      const int qa = m.sorted[static_cast<std::size_t>(a)];
      for (int nu = 0; nu < nq; ++nu) {
        Index shifted = m.sorted;
        shifted[static_cast<std::size_t>(a)] = nu;
        Canonical canon = canonicalize(shifted, chart.dim());
        if (canon.sign == 0) continue;
        auto it = table.find({canon.index, nu});
        if (it == table.end()) continue;
        Expr d = it->second.diff(qa);
        c += canon.sign > 0 ? d : -d;
      }
    }
    if (!c.is_zero()) out[m.sorted] = c;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Observable construction and expansion

ObservableForm ObservableForm::position(int field, std::vector<Expr> f) {
  ObservableForm o;
  o.kind = ObservableKind::Position;
  o.field = field;
  o.f = std::move(f);
  o.label = "Q[y" + std::to_string(field + 1) + "]";
  return o;
}

ObservableForm ObservableForm::generalized_position(std::vector<ZetaEntry> zeta) {
  ObservableForm o;
  o.kind = ObservableKind::GeneralizedPosition;
  o.zeta = std::move(zeta);
  o.label = "Qzeta";
  return o;
}

ObservableForm ObservableForm::momentum(int coordinate, Expr g) {
  ObservableForm o;
  o.kind = ObservableKind::Momentum;
  o.coordinate = coordinate;
  o.weight = std::move(g);
  o.label = "P[" + std::to_string(coordinate) + "]";
  return o;
}

ObservableForm ObservableForm::generalized_momentum(std::vector<Expr> xi) {
  ObservableForm o;
  o.kind = ObservableKind::GeneralizedMomentum;
  o.xi = std::move(xi);
  o.label = "Pxi";
  return o;
}

ObservableForm ObservableForm::star_momentum(int coordinate, Expr g, Expr hamiltonian) {
  ObservableForm o;
  o.kind = ObservableKind::StarMomentum;
  o.coordinate = coordinate;
  o.weight = std::move(g);
  o.hamiltonian = std::move(hamiltonian);
  o.label = "Pstar[" + std::to_string(coordinate) + "]";
  return o;
}

ObservableForm ObservableForm::hamiltonian_density(Expr hamiltonian) {
  ObservableForm o;
  o.kind = ObservableKind::HamiltonianDensity;
  o.hamiltonian = std::move(hamiltonian);
  o.label = "Homega";
  return o;
}

ObservableForm ObservableForm::eta(Expr hamiltonian) {
  ObservableForm o;
  o.kind = ObservableKind::Eta;
  o.hamiltonian = std::move(hamiltonian);
  o.label = "eta";
  return o;
}

ObservableForm ObservableForm::eta_slice(Expr hamiltonian, int time_axis) {
  ObservableForm o;
  o.kind = ObservableKind::EtaSlice;
  o.hamiltonian = std::move(hamiltonian);
  o.time_axis = time_axis;
  o.label = "eta0";
  return o;
}

ObservableForm ObservableForm::generic(DifferentialForm form, std::string label) {
  ObservableForm o;
  o.kind = ObservableKind::Generic;
  o.form = std::move(form);
  o.label = std::move(label);
  return o;
}

int ObservableForm::degree(const Chart& chart) const {
  switch (kind) {
    case ObservableKind::HamiltonianDensity:
    case ObservableKind::Eta:
      return chart.n();
    case ObservableKind::Generic:
      return form.degree();
    default:
      return chart.n() - 1;
  }
}

DifferentialForm ObservableForm::expand(const Chart& chart) const {
  const int dim = chart.dim();
  const int nq = chart.n() + chart.k();
  switch (kind) {
    case ObservableKind::Position: {
      if (field < 0 || field >= chart.k()) throw std::out_of_range("field index out of range");
      if (static_cast<int>(f.size()) != chart.n()) throw std::invalid_argument("position form needs n components");
      DifferentialForm out(dim, chart.n() - 1);
      for (int a = 0; a < chart.n(); ++a)
        out += (chart.sym(chart.y(field)) * f[static_cast<std::size_t>(a)]) * volume_contraction(chart, {a});
      return out;
    }
    case ObservableKind::GeneralizedPosition: {
      DifferentialForm omega = pataplectic_form(chart);
      DifferentialForm out(dim, chart.n() - 1);
      for (const auto& z : zeta) {
        if (!std::binary_search(z.momentum.begin(), z.momentum.end(), z.coordinate))
          throw std::invalid_argument("zeta coordinate must belong to its momentum index");
        VectorField dp = momentum_direction(chart, z.momentum, Expr(1));
        if (dp.empty()) throw std::invalid_argument("zeta refers to a momentum absent from the chart");
        DifferentialForm c = interior(VectorField::basis(dim, z.coordinate), interior(dp, omega));
        out += z.coeff * c;
      }
      return out;
    }
    case ObservableKind::Momentum: {
      if (coordinate < 0 || coordinate >= nq) throw std::out_of_range("momentum coordinate out of range");
      return weight * interior(VectorField::basis(dim, coordinate), cartan_form(chart));
    }
    case ObservableKind::GeneralizedMomentum: {
      if (static_cast<int>(xi.size()) != nq) throw std::invalid_argument("xi needs n+k components");
      return interior(vector_from(chart, xi), cartan_form(chart));
    }
    case ObservableKind::StarMomentum: {
      if (coordinate < 0 || coordinate >= nq) throw std::out_of_range("momentum coordinate out of range");
      DifferentialForm lag = cartan_form(chart) - hamiltonian * omega_form(chart);
      return weight * interior(VectorField::basis(dim, coordinate), lag);
    }
    case ObservableKind::HamiltonianDensity:
      return hamiltonian * omega_form(chart);
    case ObservableKind::Eta:
      return hamiltonian * omega_form(chart) - cartan_form(chart);
    case ObservableKind::EtaSlice: {
      if (time_axis < 0 || time_axis >= chart.n()) throw std::out_of_range("time axis out of range");
      DifferentialForm lag = cartan_form(chart) - hamiltonian * omega_form(chart);
      return -interior(VectorField::basis(dim, chart.x(time_axis)), lag);
    }
    case ObservableKind::Generic:
      if (form.dim() != dim) throw std::invalid_argument("chart mismatch in generic observable");
      return form;
  }
  return {};
}

// ---------------------------------------------------------------------------
// Grammar

namespace {

std::string trim(std::string s) {
  auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && issp(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
  while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

std::vector<std::string> split_top(const std::string& body, char sep) {
  std::vector<std::string> parts;
  int depth = 0;
  std::string cur;
  for (char c : body) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == sep && depth == 0) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !parts.empty()) parts.push_back(trim(cur));
  return parts;
}

int lookup_or_throw(const Chart& chart, const std::string& name) {
  auto id = chart.lookup(trim(name));
  if (!id) throw std::invalid_argument("unknown coordinate '" + trim(name) + "'");
  return *id;
}

}  // namespace

ObservableForm parse_observable(const Chart& chart, const std::string& raw, const std::optional<Expr>& hamiltonian) {
  const std::string text = trim(raw);
  std::size_t pos = 0;
  while (pos < text.size() && (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_')) ++pos;
  const std::string name = text.substr(0, pos);
  std::string arg;
  std::optional<std::string> body;
  if (pos < text.size() && text[pos] == '[') {
    auto close = text.find(']', pos);
    if (close == std::string::npos) throw std::invalid_argument("unterminated '[' in observable");
    arg = trim(text.substr(pos + 1, close - pos - 1));
    pos = close + 1;
  }
  if (pos < text.size() && text[pos] == '(') {
    if (text.back() != ')') throw std::invalid_argument("observable body must end with ')'");
    body = text.substr(pos + 1, text.size() - pos - 2);
    pos = text.size();
  }
  if (pos != text.size()) throw std::invalid_argument("trailing characters in observable '" + text + "'");

  auto exprs = [&]() {
    std::vector<Expr> out;
    if (!body) return out;
    for (const auto& part : split_top(*body, ';')) out.push_back(chart.parse(part));
    return out;
  };
  auto need_h = [&]() -> const Expr& {
    if (!hamiltonian) throw std::invalid_argument("observable '" + name + "' needs a model Hamiltonian");
    return *hamiltonian;
  };

  ObservableForm o;
  if (name == "Q") {
    int id = lookup_or_throw(chart, arg);
    if (!chart.is_field(id)) throw std::invalid_argument("Q[...] needs a field coordinate");
    auto f = exprs();
    if (static_cast<int>(f.size()) != chart.n()) throw std::invalid_argument("Q needs n components f^a");
    o = ObservableForm::position(id - chart.n(), f);
  } else if (name == "P" || name == "Pstar") {
    int id = lookup_or_throw(chart, arg);
    if (id >= chart.n() + chart.k()) throw std::invalid_argument("P[...] needs a base or field coordinate");
    auto g = exprs();
    if (g.size() > 1) throw std::invalid_argument("P takes a single weight");
    Expr weight = g.empty() ? Expr(1) : g.front();
    o = name == "P" ? ObservableForm::momentum(id, weight) : ObservableForm::star_momentum(id, weight, need_h());
  } else if (name == "Pxi") {
    auto xi = exprs();
    if (static_cast<int>(xi.size()) != chart.n() + chart.k()) throw std::invalid_argument("Pxi needs n+k components");
    o = ObservableForm::generalized_momentum(xi);
  } else if (name == "Qzeta") {
    std::vector<ZetaEntry> zeta;
    for (const auto& part : split_top(body.value_or(""), ';')) {
      auto eq = part.find('=');
      auto at = part.find('@');
      if (eq == std::string::npos || at == std::string::npos || at > eq)
        throw std::invalid_argument("Qzeta entries look like 'momentum@coordinate = expr'");
      int m = lookup_or_throw(chart, part.substr(0, at));
      if (!chart.is_momentum(m)) throw std::invalid_argument("Qzeta entry needs a momentum name");
      int c = lookup_or_throw(chart, part.substr(at + 1, eq - at - 1));
      const Index& sorted = chart.momentum_of(m).sorted;
      if (!std::binary_search(sorted.begin(), sorted.end(), c))
        throw std::invalid_argument("zeta coordinate must belong to its momentum index");
      zeta.push_back({sorted, c, chart.parse(part.substr(eq + 1))});
    }
    o = ObservableForm::generalized_position(zeta);
  } else if (name == "Homega") {
    o = ObservableForm::hamiltonian_density(need_h());
  } else if (name == "eta") {
    o = ObservableForm::eta(need_h());
  } else if (name == "eta0") {
    int axis = 0;
    if (!arg.empty()) {
      axis = lookup_or_throw(chart, arg);
      if (!chart.is_base(axis)) throw std::invalid_argument("eta0[...] needs a base coordinate");
    }
    o = ObservableForm::eta_slice(need_h(), axis);
  } else if (name == "form") {
    int degree = 0;
    try {
      degree = std::stoi(arg);
    } catch (const std::exception&) {
      throw std::invalid_argument("form[...] needs an integer degree");
    }
    DifferentialForm a(chart.dim(), degree);
    for (const auto& part : split_top(body.value_or(""), ';')) {
      auto eq = part.find('=');
      std::string key = eq == std::string::npos ? "" : part.substr(0, eq);
      std::string value = eq == std::string::npos ? part : part.substr(eq + 1);
      Index idx;
      for (const auto& nm : split_top(key, ',')) {
        if (nm.empty()) continue;
        int id = lookup_or_throw(chart, nm);
        if (id >= chart.dim()) throw std::invalid_argument("differentials must be chart coordinates");
        idx.push_back(id);
      }
      if (static_cast<int>(idx.size()) != degree) throw std::invalid_argument("form entry index length differs from degree");
      a.add(idx, chart.parse(value));
    }
    o = ObservableForm::generic(a);
  } else {
    throw std::invalid_argument("unknown observable '" + name + "'");
  }
  o.label = text;
  return o;
}

// ---------------------------------------------------------------------------
// Xi

VectorField momentum_shift(const Chart& chart, int nu, int mu) {
  VectorField out(chart.dim(), 1);
  for (const auto& m : chart.momenta()) {
    for (int a = 0; a < chart.n(); ++a) {
      if (m.sorted[static_cast<std::size_t>(a)] != nu) continue;
      Index shifted = m.sorted;
      shifted[static_cast<std::size_t>(a)] = mu;
      Expr p = chart.p_component(shifted);
      if (p.is_zero()) continue;
      out.add({m.symbol}, m.sign > 0 ? p : -p);
    }
  }
  return out;
}

namespace {

VectorField xi_generalized_momentum(const Chart& chart, const std::vector<Expr>& xi) {
  const int nq = chart.n() + chart.k();
  VectorField out = vector_from(chart, xi);
  for (int mu = 0; mu < nq; ++mu) {
    for (int nu = 0; nu < nq; ++nu) {
      Expr d = xi[static_cast<std::size_t>(mu)].diff(nu);
      if (d.is_zero()) continue;
      out -= d * momentum_shift(chart, nu, mu);
    }
  }
  return out;
}

}  // namespace

std::optional<VectorField> xi_closed_form(const Chart& chart, const ObservableForm& a) {
  const int dim = chart.dim();
  const int nq = chart.n() + chart.k();
  switch (a.kind) {
    case ObservableKind::Position: {
      require_weyl_momenta(chart);
      VectorField out(dim, 1);
      Expr div;
      for (int al = 0; al < chart.n(); ++al) {
        const Expr& fa = a.f[static_cast<std::size_t>(al)];
        out.add({momentum_p(chart, al, a.field)}, -fa);
        div += fa.diff(chart.x(al));
      }
      out.add({chart.eps()}, -(chart.sym(chart.y(a.field)) * div));
      return out;
    }
    case ObservableKind::GeneralizedPosition: {
      VectorField out(dim, 1);
      for (const auto& [idx, c] : zeta_divergence(chart, a.zeta)) out += momentum_direction(chart, idx, -c);
      return out;
    }
    case ObservableKind::Momentum: {
      std::vector<Expr> xi(static_cast<std::size_t>(nq));
      xi[static_cast<std::size_t>(a.coordinate)] = a.weight;
      return xi_generalized_momentum(chart, xi);
    }
    case ObservableKind::GeneralizedMomentum:
      return xi_generalized_momentum(chart, a.xi);
    default:
      return std::nullopt;
  }
}

DifferentialForm xi_defect(const Chart& chart, const DifferentialForm& a, const VectorField& xi) {
  return exterior_derivative(a) + interior(xi, pataplectic_form(chart));
}

VectorField xi_solve(const Chart& chart, const DifferentialForm& a) {
  const int dim = chart.dim();
  if (a.degree() != chart.n() - 1) throw std::invalid_argument("pataplectic fields are defined for (n-1)-forms");
  const DifferentialForm omega = pataplectic_form(chart);
  const DifferentialForm target = -exterior_derivative(a);

  struct Row {
    std::map<int, Expr> a;
    Expr b;
  };
  std::map<Index, Row> by_key;
  for (int mu = 0; mu < dim; ++mu) {
    DifferentialForm c = interior(VectorField::basis(dim, mu), omega);
    for (const auto& [k, v] : c.terms()) by_key[k].a[mu] = v;
  }
  for (const auto& [k, v] : target.terms()) by_key[k].b = v;
  std::vector<Row> rows;
  rows.reserve(by_key.size());
  for (auto& [k, r] : by_key) rows.push_back(std::move(r));

  auto nonzero = [](const Expr& e) { return !e.is_zero() && !is_zero_value(e); };
  auto rank = [](const Expr& e) { return e.is_constant() ? 0 : (e.is_monomial() ? 1 : 2); };

  std::vector<int> pivot_row(static_cast<std::size_t>(dim), -1);
  std::vector<bool> used(rows.size(), false);
  for (;;) {
    int best_r = -1;
    int best_c = -1;
    std::pair<int, std::size_t> best_score{3, 0};
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (used[r]) continue;
      for (auto it = rows[r].a.begin(); it != rows[r].a.end();) {
        if (!nonzero(it->second)) {
          it = rows[r].a.erase(it);
          continue;
        }
        std::pair<int, std::size_t> score{rank(it->second), rows[r].a.size()};
        if (best_r < 0 || score < best_score) {
          best_score = score;
          best_r = static_cast<int>(r);
          best_c = it->first;
        }
        ++it;
      }
    }
    if (best_r < 0) break;
    used[static_cast<std::size_t>(best_r)] = true;
    pivot_row[static_cast<std::size_t>(best_c)] = best_r;
    const Row pivot = rows[static_cast<std::size_t>(best_r)];
    const Expr& pv = pivot.a.at(best_c);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<int>(r) == best_r) continue;
      auto it = rows[r].a.find(best_c);
      if (it == rows[r].a.end()) continue;
      Expr factor = it->second / pv;
      for (const auto& [c, v] : pivot.a) {
        Expr updated = rows[r].a[c] - factor * v;
        if (updated.is_zero()) rows[r].a.erase(c);
        else rows[r].a[c] = updated;
      }
      rows[r].a.erase(best_c);
      rows[r].b = rows[r].b - factor * pivot.b;
    }
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (used[r]) continue;
    if (nonzero(rows[r].b))
      throw NotPataplectic("form is not in the pataplectic class: da has a component outside the span of X ⌟ Omega");
  }
  VectorField out(dim, 1);
  for (int c = 0; c < dim; ++c) {
    int r = pivot_row[static_cast<std::size_t>(c)];
    if (r < 0)
      throw std::domain_error("Omega is degenerate on this chart: direction " + chart.name(c) + " is undetermined");
    const Row& row = rows[static_cast<std::size_t>(r)];
    out.add({c}, row.b / row.a.at(c));
  }
  return out;
}

PataplecticVectorField xi_of(const Chart& chart, const ObservableForm& a) {
  if (a.degree(chart) != chart.n() - 1)
    throw NotPataplectic("'" + a.label + "' has degree " + std::to_string(a.degree(chart)) + ", not n-1");
  DifferentialForm expanded = a.expand(chart);
  if (chart.flat_volume()) {
    if (auto closed = xi_closed_form(chart, a)) {
      if (is_zero_form(xi_defect(chart, expanded, *closed))) return {*closed, a.label, true};
    }
  }
  return {xi_solve(chart, expanded), a.label, false};
}

// ---------------------------------------------------------------------------
// Brackets

DifferentialForm pbracket_internal(const Chart& chart, const ObservableForm& a, const ObservableForm& b) {
  VectorField xa = xi_of(chart, a).field;
  VectorField xb = xi_of(chart, b).field;
  return interior(xb, interior(xa, pataplectic_form(chart)));
}

DifferentialForm pbracket_external(const Chart& chart, const DifferentialForm& a, const ObservableForm& b) {
  if (a.degree() > chart.n()) throw std::invalid_argument("external bracket needs a form of degree <= n");
  VectorField xb = xi_of(chart, b).field;
  return -interior(xb, exterior_derivative(a));
}

DifferentialForm pbracket_external(const Chart& chart, const ObservableForm& a, const ObservableForm& b) {
  return pbracket_external(chart, a.expand(chart), b);
}

AdmissibilityVerdict is_admissible(const Chart& chart, const ObservableForm& a) {
  VectorField xi = xi_of(chart, a).field;
  AdmissibilityVerdict v;
  for (int beta = 0; beta < chart.n(); ++beta) {
    Expr c = xi.coeff({chart.x(beta)});
    if (!is_zero_value(c)) {
      v.admissible = false;
      v.beta = beta;
      v.component = c;
      return v;
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Hamiltonian n-vectors and the omega-bracket

MultiVectorField hamiltonian_nvector(const Chart& chart, const Expr& hamiltonian, std::uint64_t seed) {
  require_weyl_momenta(chart);
  const int n = chart.n();
  const int dim = chart.dim();
  const Expr sign = (n % 2 == 0) ? Expr(1) : Expr(-1);
  const DifferentialForm omega = pataplectic_form(chart);

  std::set<Index> designated;
  for (const auto& m : chart.momenta()) designated.insert(m.sorted);
  std::vector<Index> field_slots;
  for (int i = 0; i < chart.k(); ++i) {
    Index k;
    for (int a = 1; a < n; ++a) k.push_back(chart.x(a));
    k.push_back(momentum_p(chart, 0, i));
    std::sort(k.begin(), k.end());
    field_slots.push_back(k);
    designated.insert(k);
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> wide(-997, 997);
  std::uniform_int_distribution<int> which(0, dim - 1);
  MultiVectorField x(dim, n);
  for (const auto& k : combinations(dim, n)) {
    if (designated.contains(k)) continue;
    Expr c = Expr(wide(rng));
    if (wide(rng) > 0) c += Expr(wide(rng)) * chart.sym(which(rng));
    x.add(k, c);
  }

  auto unit = [&](const Index& k) {
    MultiVectorField e(dim, n);
    e.add(k, Expr(1));
    return e;
  };

  MultiVectorField solved = x;
  for (const auto& m : chart.momenta()) {
    DifferentialForm r = sign * interior(x, omega);
    Expr coeff = sign * interior(unit(m.sorted), omega).coeff({m.symbol});
    Expr target = hamiltonian.diff(m.symbol);
    solved.add(m.sorted, (target - r.coeff({m.symbol})) / coeff);
  }
  DifferentialForm r = sign * interior(solved, omega);
  MultiVectorField out = solved;
  for (int i = 0; i < chart.k(); ++i) {
    const int yi = chart.y(i);
    Expr coeff = sign * interior(unit(field_slots[static_cast<std::size_t>(i)]), omega).coeff({yi});
    Expr target = hamiltonian.diff(yi);
    out.add(field_slots[static_cast<std::size_t>(i)], (target - r.coeff({yi})) / coeff);
  }
  return out;
}

DifferentialForm hamiltonian_nvector_defect(const Chart& chart, const Expr& hamiltonian, const MultiVectorField& x) {
  const Expr sign = (chart.n() % 2 == 0) ? Expr(1) : Expr(-1);
  DifferentialForm diff = sign * interior(x, pataplectic_form(chart)) -
                          exterior_derivative(scalar_form(chart, hamiltonian));
  DifferentialForm out(chart.dim(), 1);
  for (const auto& [k, v] : diff.terms())
    if (!chart.is_base(k[0])) out.add(k, v);
  return out;
}

DifferentialForm sharp(const Chart& chart, const MultiVectorField& x, const DifferentialForm& lambda) {
  const int n = chart.n();
  const int m = n - lambda.degree() - 1;
  if (m < 0) throw std::invalid_argument("sharp needs a form of degree at most n-1");
  if (x.degree() != n) throw std::invalid_argument("sharp needs an n-vector");
  const int dim = chart.dim();
  DifferentialForm dl = exterior_derivative(lambda);
  DifferentialForm out(dim, lambda.degree() + 1);
  for (const auto& alphas : combinations(n, m)) {
    DifferentialForm dxa = DifferentialForm::scalar(dim, Expr(1));
    for (int a : alphas) dxa = wedge(dxa, DifferentialForm::basis(dim, chart.x(a)));
    Expr c = pairing(x, wedge(dxa, dl));
    if (c.is_zero()) continue;
    out += c * volume_contraction(chart, alphas);
  }
  return out;
}

bool lives_on_base_and_fibre(const Chart& chart, const DifferentialForm& a) {
  const int nq = chart.n() + chart.k();
  for (const auto& [k, v] : a.terms()) {
    for (int mu : k)
      if (mu >= nq) return false;
    for (int s : v.symbols())
      if (s >= nq) return false;
  }
  return true;
}

DifferentialForm omega_bracket(const Chart& chart, const Expr& hamiltonian, const DifferentialForm& lambda,
                               std::uint64_t seed) {
  if (lambda.degree() > chart.n() - 1) throw std::invalid_argument("omega-bracket needs a form of degree <= n-1");
  MultiVectorField x = hamiltonian_nvector(chart, hamiltonian, seed);
  DifferentialForm result = sharp(chart, x, lambda);
  if (lives_on_base_and_fibre(chart, lambda)) return result;
  if (lambda.degree() == chart.n() - 1) {
    try {
      AdmissibilityVerdict v = is_admissible(chart, ObservableForm::generic(lambda));
      if (!v.admissible)
        throw NotAdmissible("form is not admissible: Xi has a component along d/d" + chart.name(chart.x(v.beta)));
      return result;
    } catch (const NotPataplectic&) {
      // fall through to the direct comparison
    }
  }
  MultiVectorField other = hamiltonian_nvector(chart, hamiltonian, seed ^ 0x9e3779b97f4a7c15ULL);
  if (!is_zero_form(result - sharp(chart, other, lambda)))
    throw NotAdmissible("form is not admissible: X # lambda depends on the Hamiltonian n-vector");
  return result;
}

// ---------------------------------------------------------------------------
// Bracket table

const char* to_string(TableFlag flag) {
  switch (flag) {
    case TableFlag::Match:
      return "match";
    case TableFlag::Mismatch:
      return "mismatch";
    case TableFlag::NotStated:
      return "n/a";
  }
  return "n/a";
}

BracketTableInputs default_table_inputs(const Chart& chart) {
  const int n = chart.n();
  BracketTableInputs in;
  for (int a = 0; a < n; ++a) {
    Expr next = chart.sym(chart.x((a + 1) % n));
    Expr self = chart.sym(chart.x(a));
    in.f.push_back(Expr(a + 1) + next);
    in.f_tilde.push_back(self * next + Expr(2 - a));
  }
  Expr x0 = chart.sym(chart.x(0));
  Expr xl = chart.sym(chart.x(n - 1));
  in.g = Expr(1) + x0 * xl;
  in.g_tilde = Expr(2) - xl + x0 * x0;
  return in;
}

namespace {

struct TableItem {
  enum class Type { Q, P, Eta0, HOmega } type;
  int index = 0;  // field for Q, coordinate for P
  ObservableForm obs;
  std::string label;
};

std::string coord_label(const Chart& chart, int id) { return chart.name(id); }

/// {P_xi, Q^zeta} = sum_I c_I xi ⌟ dq^I.
DifferentialForm prop1_pq(const Chart& chart, const VectorField& xi, const std::vector<ZetaEntry>& zeta) {
  DifferentialForm out(chart.dim(), chart.n() - 1);
  for (const auto& [idx, c] : zeta_divergence(chart, zeta)) {
    DifferentialForm dq(chart.dim(), chart.n());
    dq.add(idx, Expr(1));
    out += c * interior(xi, dq);
  }
  return out;
}

std::vector<ZetaEntry> zeta_of_position(const Chart& chart, int field, const std::vector<Expr>& f) {
  Index base;
  for (int a = 0; a < chart.n(); ++a) base.push_back(a);
  std::vector<ZetaEntry> zeta;
  for (int a = 0; a < chart.n(); ++a)
    zeta.push_back({base, chart.x(a), chart.sym(chart.y(field)) * f[static_cast<std::size_t>(a)]});
  return zeta;
}

}  // namespace

std::vector<BracketEntry> bracket_table(const Chart& chart, const Expr& hamiltonian, const BracketTableInputs& in) {
  const int n = chart.n();
  const int k = chart.k();
  const int dim = chart.dim();
  const bool flat = chart.flat_volume();

  std::vector<TableItem> left;
  std::vector<TableItem> right;
  for (int i = 0; i < k; ++i) {
    std::string y = coord_label(chart, chart.y(i));
    left.push_back({TableItem::Type::Q, i, ObservableForm::position(i, in.f), "Q[" + y + ",f]"});
    right.push_back({TableItem::Type::Q, i, ObservableForm::position(i, in.f_tilde), "Q[" + y + ",f~]"});
  }
  for (int mu = 0; mu < n + k; ++mu) {
    std::string q = coord_label(chart, mu);
    left.push_back({TableItem::Type::P, mu, ObservableForm::momentum(mu, in.g), "P[" + q + ",g]"});
    right.push_back({TableItem::Type::P, mu, ObservableForm::momentum(mu, in.g_tilde), "P[" + q + ",g~]"});
  }
  for (auto* side : {&left, &right}) {
    side->push_back({TableItem::Type::Eta0, 0, ObservableForm::eta_slice(hamiltonian, 0), "eta0"});
    side->push_back({TableItem::Type::HOmega, 0, ObservableForm::hamiltonian_density(hamiltonian), "Homega"});
  }

  auto in_p = [](const TableItem& t) { return t.type == TableItem::Type::Q || t.type == TableItem::Type::P; };

  // Xi of every bracketable observable, computed once.
  std::vector<std::optional<VectorField>> xi_left(left.size()), xi_right(right.size());
  parallel_for(left.size() + right.size(), [&](std::size_t idx) {
    bool is_left = idx < left.size();
    const TableItem& t = is_left ? left[idx] : right[idx - left.size()];
    if (!in_p(t)) return;
    VectorField v = xi_of(chart, t.obs).field;
    (is_left ? xi_left[idx] : xi_right[idx - left.size()]) = std::move(v);
  });

  const DifferentialForm omega = pataplectic_form(chart);
  const DifferentialForm theta = cartan_form(chart);
  const DifferentialForm vol = base_volume(chart);
  const DifferentialForm h_omega = hamiltonian * vol;
  const DifferentialForm omega0 = volume_contraction(chart, {0});

  // Expected value of {L, R} where the closed expression is known.
  auto expected = [&](const TableItem& l, const TableItem& r) -> std::optional<DifferentialForm> {
    using T = TableItem::Type;
    if (!flat) return std::nullopt;
    auto vec = [&](int mu, const Expr& g) { return VectorField::basis(dim, mu, g); };
    auto weight_of = [&](bool is_left) { return is_left ? in.g : in.g_tilde; };
    auto f_of = [&](bool is_left) -> const std::vector<Expr>& { return is_left ? in.f : in.f_tilde; };
    auto p_of = [&](int a, int i) { return chart.sym(momentum_p(chart, a, i)); };

    // {eta0, b} and {H omega, b} for b = Q or P (b on the right).
    auto slice_row = [&](T head, const TableItem& b, bool b_left) -> std::optional<DifferentialForm> {
      if (b.type == T::Q) {
        const int i = b.index;
        const auto& f = f_of(b_left);
        if (head == T::Eta0) {
          DifferentialForm out(dim, n - 1);
          for (int a = 0; a < n; ++a) out += (f[static_cast<std::size_t>(a)] * hamiltonian.diff(momentum_p(chart, a, i))) * omega0;
          for (int a = 1; a < n; ++a)
            out -= f[static_cast<std::size_t>(a)] *
                   wedge(DifferentialForm::basis(dim, chart.y(i)), volume_contraction(chart, {0, a}));
          return out;
        }
        Expr c;
        for (int a = 0; a < n; ++a) {
          const Expr& fa = f[static_cast<std::size_t>(a)];
          c += fa * hamiltonian.diff(momentum_p(chart, a, i)) + chart.sym(chart.y(i)) * fa.diff(chart.x(a));
        }
        return c * vol;
      }
      if (b.type == T::P && chart.is_field(b.index)) {
        const int i = b.index - n;
        const Expr g = weight_of(b_left);
        if (head == T::Eta0) {
          DifferentialForm out = (-(g * hamiltonian.diff(chart.y(i)))) * omega0;
          for (int a = 1; a < n; ++a)
            out -= g * wedge(DifferentialForm::basis(dim, momentum_p(chart, a, i)), volume_contraction(chart, {0, a}));
          return out;
        }
        Expr c = -(g * hamiltonian.diff(chart.y(i)));
        for (int a = 0; a < n; ++a) c += p_of(a, i) * g.diff(chart.x(a));
        return c * vol;
      }
      if (b.type == T::P && head == T::HOmega) {
        // Noether relation: {H omega, P_xi} = L_{Xi(P_xi)}(theta - H omega) + d(xi ⌟ H omega).
        VectorField xi = vec(b.index, weight_of(b_left));
        VectorField big = xi_of(chart, b.obs).field;
        return lie_derivative(big, theta - h_omega) + exterior_derivative(interior(xi, h_omega));
      }
      return std::nullopt;
    };

    if (l.type == T::Q && r.type == T::Q) return DifferentialForm(dim, n - 1);
    if (l.type == T::P && r.type == T::P) {
      VectorField xi = vec(l.index, in.g);
      VectorField xt = vec(r.index, in.g_tilde);
      if (chart.is_field(l.index) && chart.is_field(r.index))
        return exterior_derivative((in.g * in.g_tilde) * interior(VectorField::basis(dim, r.index),
                                                                 interior(VectorField::basis(dim, l.index), theta)));
      VectorField br = lie_bracket(xi, xt);
      return interior(br, theta) + exterior_derivative(interior(xt, interior(xi, theta)));
    }
    if (l.type == T::P && r.type == T::Q) {
      if (chart.is_field(l.index)) {
        if (l.index - n != r.index) return DifferentialForm(dim, n - 1);
        DifferentialForm out(dim, n - 1);
        for (int a = 0; a < n; ++a) out += (in.f_tilde[static_cast<std::size_t>(a)] * in.g) * volume_contraction(chart, {a});
        return out;
      }
      return prop1_pq(chart, vec(l.index, in.g), zeta_of_position(chart, r.index, in.f_tilde));
    }
    if (l.type == T::Q && r.type == T::P) {
      if (chart.is_field(r.index)) {
        if (r.index - n != l.index) return DifferentialForm(dim, n - 1);
        DifferentialForm out(dim, n - 1);
        for (int a = 0; a < n; ++a) out -= (in.f[static_cast<std::size_t>(a)] * in.g_tilde) * volume_contraction(chart, {a});
        return out;
      }
      return -prop1_pq(chart, vec(r.index, in.g_tilde), zeta_of_position(chart, l.index, in.f));
    }
    if ((l.type == T::Eta0 || l.type == T::HOmega) && in_p(r)) return slice_row(l.type, r, false);
    if (in_p(l) && (r.type == T::Eta0 || r.type == T::HOmega)) {
      auto v = slice_row(r.type, l, true);
      if (v) return -*v;
    }
    return std::nullopt;
  };

  std::vector<BracketEntry> out(left.size() * right.size());
  parallel_for(out.size(), [&](std::size_t idx) {
    const TableItem& l = left[idx / right.size()];
    const TableItem& r = right[idx % right.size()];
    BracketEntry e;
    e.left = l.label;
    e.right = r.label;
    if (in_p(l) && in_p(r)) {
      e.kind = "internal";
      e.value = interior(*xi_right[idx % right.size()], interior(*xi_left[idx / right.size()], omega));
    } else if (in_p(r)) {
      e.kind = "external";
      e.value = -interior(*xi_right[idx % right.size()], exterior_derivative(l.obs.expand(chart)));
    } else if (in_p(l)) {
      e.kind = "external";
      e.value = interior(*xi_left[idx / right.size()], exterior_derivative(r.obs.expand(chart)));
    } else {
      e.kind = "undefined";
      e.note = "neither operand is in the pataplectic class";
    }
    if (e.value) {
      e.expected = expected(l, r);
      if (e.expected) e.flag = is_zero_form(*e.value - *e.expected) ? TableFlag::Match : TableFlag::Mismatch;
    }
    out[idx] = std::move(e);
  });
  return out;
}

}  // namespace pataplectic
