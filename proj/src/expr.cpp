#include "pataplectic/expr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pataplectic {

struct ExprBuilder {
  static Expr make(std::vector<Term> terms) {
    auto node = std::make_shared<ExprNode>();
    node->terms = std::move(terms);
    return Expr(std::shared_ptr<const ExprNode>(std::move(node)));
  }
};

namespace {

const std::shared_ptr<const ExprNode>& zero_node() {
  static const std::shared_ptr<const ExprNode> node = std::make_shared<ExprNode>();
  return node;
}

std::strong_ordering compare_monomials(const Monomial& a, const Monomial& b) {
  // Shorter monomials first so constants lead and printing is stable.
  if (a.size() != b.size()) return a.size() <=> b.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto c = a[i] <=> b[i];
    if (c != 0) return c;
  }
  return std::strong_ordering::equal;
}

/// Sorts terms, merges equal monomials and drops zero coefficients.
Expr from_terms(std::vector<Term> terms) {
  std::sort(terms.begin(), terms.end(),
            [](const Term& a, const Term& b) { return compare_monomials(a.mono, b.mono) < 0; });
  std::vector<Term> merged;
  merged.reserve(terms.size());
  for (auto& t : terms) {
    if (!merged.empty() && compare_monomials(merged.back().mono, t.mono) == 0) {
      merged.back().coeff += t.coeff;
    } else {
      merged.push_back(std::move(t));
    }
  }
  std::erase_if(merged, [](const Term& t) { return t.coeff.is_zero(); });
  return ExprBuilder::make(std::move(merged));
}

Expr atom_power(const Atom& atom, int exponent);

/// Multiplies monomials, then rewrites sqrt(u)^(2m+r) as u^m sqrt(u)^r.
Expr multiply_terms(const Term& a, const Term& b) {
  Monomial mono;
  mono.reserve(a.mono.size() + b.mono.size());
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.mono.size() || j < b.mono.size()) {
    if (j == b.mono.size() || (i < a.mono.size() && a.mono[i].atom < b.mono[j].atom)) {
      mono.push_back(a.mono[i++]);
    } else if (i == a.mono.size() || b.mono[j].atom < a.mono[i].atom) {
      mono.push_back(b.mono[j++]);
    } else {
      Factor f = a.mono[i++];
      f.exponent += b.mono[j++].exponent;
      if (f.exponent != 0) mono.push_back(std::move(f));
    }
  }
  Rational coeff = a.coeff * b.coeff;
  Expr extra(1);
  bool reduced = false;
  for (auto& f : mono) {
    if (f.atom.kind == AtomKind::Sqrt && (f.exponent >= 2 || f.exponent <= -2)) {
      int whole = f.exponent / 2;
      extra = extra * f.atom.arg.pow(whole);
      f.exponent -= 2 * whole;
      reduced = true;
    } else if (f.atom.kind == AtomKind::ReciprocalSum && f.exponent > 0) {
      extra = extra * f.atom.arg.pow(f.exponent);
      f.exponent = 0;
      reduced = true;
    }
  }
  if (reduced) std::erase_if(mono, [](const Factor& f) { return f.exponent == 0; });
  Expr base = ExprBuilder::make({Term{coeff, std::move(mono)}});
  if (coeff.is_zero()) return Expr();
  return reduced ? base * extra : base;
}

Expr atom_power(const Atom& atom, int exponent) {
  if (exponent == 0) return Expr(1);
  Term unit{Rational(1), {}};
  Term t{Rational(1), {Factor{atom, exponent}}};
  return multiply_terms(unit, t);
}

Expr make_function(AtomKind kind, const Expr& arg) {
  return atom_power(Atom{kind, -1, arg}, 1);
}

std::optional<std::int64_t> exact_isqrt(std::int64_t v) {
  if (v < 0) return std::nullopt;
  auto r = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<long double>(v))));
  for (std::int64_t c = std::max<std::int64_t>(0, r - 2); c <= r + 2; ++c)
    if (c * c == v) return c;
  return std::nullopt;
}

double ipow(double base, int exponent) {
  if (exponent < 0) return 1.0 / ipow(base, -exponent);
  double result = 1.0;
  while (exponent > 0) {
    if (exponent & 1) result *= base;
    base *= base;
    exponent >>= 1;
  }
  return result;
}

double evaluate_atom(const Atom& atom, std::span<const double> values) {
  switch (atom.kind) {
    case AtomKind::Symbol:
      if (atom.symbol < 0 || static_cast<std::size_t>(atom.symbol) >= values.size())
        throw std::out_of_range("no value bound for symbol id " + std::to_string(atom.symbol));
      return values[static_cast<std::size_t>(atom.symbol)];
    case AtomKind::Exp: return std::exp(atom.arg.evaluate(values));
    case AtomKind::Sin: return std::sin(atom.arg.evaluate(values));
    case AtomKind::Cos: return std::cos(atom.arg.evaluate(values));
    case AtomKind::Sqrt: return std::sqrt(atom.arg.evaluate(values));
    case AtomKind::Log: return std::log(atom.arg.evaluate(values));
    case AtomKind::ReciprocalSum: return atom.arg.evaluate(values);
  }
  return 0.0;
}


Expr atom_derivative(const Atom& atom, int id) {
  switch (atom.kind) {
    case AtomKind::Symbol: return Expr(atom.symbol == id ? 1 : 0);
    case AtomKind::Exp: return exp(atom.arg) * atom.arg.diff(id);
    case AtomKind::Sin: return cos(atom.arg) * atom.arg.diff(id);
    case AtomKind::Cos: return -sin(atom.arg) * atom.arg.diff(id);
    case AtomKind::Sqrt: return Expr(Rational(1, 2)) * atom_power(atom, -1) * atom.arg.diff(id);
    case AtomKind::Log: return atom.arg.pow(-1) * atom.arg.diff(id);
    case AtomKind::ReciprocalSum: return atom.arg.diff(id);
  }
  return Expr();
}

const char* function_name(AtomKind kind) {
  switch (kind) {
    case AtomKind::Exp: return "exp";
    case AtomKind::Sin: return "sin";
    case AtomKind::Cos: return "cos";
    case AtomKind::Sqrt: return "sqrt";
    case AtomKind::Log: return "log";
    default: return "";
  }
}

void collect_symbols(const Expr& e, std::set<int>& out) {
  for (const auto& t : e.node().terms)
    for (const auto& f : t.mono) {
      if (f.atom.kind == AtomKind::Symbol)
        out.insert(f.atom.symbol);
      else
        collect_symbols(f.atom.arg, out);
    }
}

}  // namespace

bool operator==(const Atom& a, const Atom& b) { return (a <=> b) == 0; }

std::strong_ordering operator<=>(const Atom& a, const Atom& b) {
  if (a.kind != b.kind) return a.kind <=> b.kind;
  if (a.kind == AtomKind::Symbol) return a.symbol <=> b.symbol;
  return a.arg <=> b.arg;
}

std::strong_ordering operator<=>(const Factor& a, const Factor& b) {
  auto c = a.atom <=> b.atom;
  if (c != 0) return c;
  return a.exponent <=> b.exponent;
}

Expr::Expr() : node_(zero_node()) {}

Expr::Expr(const Rational& value) : node_(zero_node()) {
  if (!value.is_zero()) *this = ExprBuilder::make({Term{value, {}}});
}

Expr::Expr(std::int64_t value) : Expr(Rational(value)) {}

Expr Expr::symbol(int id) {
  if (id < 0) throw std::invalid_argument("negative symbol id");
  return ExprBuilder::make({Term{Rational(1), {Factor{Atom{AtomKind::Symbol, id, Expr()}, 1}}}});
}

bool Expr::is_zero() const { return node_->terms.empty(); }

bool Expr::is_constant() const {
  return node_->terms.empty() || (node_->terms.size() == 1 && node_->terms[0].mono.empty());
}

std::optional<Rational> Expr::constant_value() const {
  if (node_->terms.empty()) return Rational(0);
  if (node_->terms.size() == 1 && node_->terms[0].mono.empty()) return node_->terms[0].coeff;
  return std::nullopt;
}

bool Expr::is_monomial() const { return node_->terms.size() == 1; }
std::size_t Expr::term_count() const { return node_->terms.size(); }

Expr Expr::operator-() const {
  std::vector<Term> terms = node_->terms;
  for (auto& t : terms) t.coeff = -t.coeff;
  return ExprBuilder::make(std::move(terms));
}

Expr operator+(const Expr& a, const Expr& b) {
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  std::vector<Term> terms;
  terms.reserve(a.node_->terms.size() + b.node_->terms.size());
  terms.insert(terms.end(), a.node_->terms.begin(), a.node_->terms.end());
  terms.insert(terms.end(), b.node_->terms.begin(), b.node_->terms.end());
  return from_terms(std::move(terms));
}

Expr operator-(const Expr& a, const Expr& b) { return a + (-b); }

Expr operator*(const Expr& a, const Expr& b) {
  if (a.is_zero() || b.is_zero()) return Expr();
  if (auto c = a.constant_value(); c && c->is_one()) return b;
  if (auto c = b.constant_value(); c && c->is_one()) return a;
  std::vector<Term> terms;
  terms.reserve(a.node_->terms.size() * b.node_->terms.size());
  Expr pending;
  for (const auto& ta : a.node_->terms) {
    for (const auto& tb : b.node_->terms) {
      Expr prod = multiply_terms(ta, tb);
      if (prod.node_->terms.size() == 1) {
        terms.push_back(prod.node_->terms[0]);
      } else {
        pending += prod;
      }
    }
  }
  Expr result = from_terms(std::move(terms));
  return pending.is_zero() ? result : result + pending;
}

Expr operator/(const Expr& a, const Expr& b) { return a * b.pow(-1); }

bool operator==(const Expr& a, const Expr& b) { return (a <=> b) == 0; }

std::strong_ordering operator<=>(const Expr& a, const Expr& b) {
  if (a.node_ == b.node_) return std::strong_ordering::equal;
  const auto& ta = a.node_->terms;
  const auto& tb = b.node_->terms;
  if (ta.size() != tb.size()) return ta.size() <=> tb.size();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    auto c = compare_monomials(ta[i].mono, tb[i].mono);
    if (c != 0) return c;
    auto cc = ta[i].coeff <=> tb[i].coeff;
    if (cc != 0) return cc;
  }
  return std::strong_ordering::equal;
}

Expr Expr::pow(int exponent) const {
  if (exponent == 0) return Expr(1);
  if (is_zero()) {
    if (exponent < 0) throw std::domain_error("negative power of zero expression");
    return Expr();
  }
  if (exponent > 0) {
    Expr result(1);
    Expr base = *this;
    int e = exponent;
    while (e > 0) {
      if (e & 1) result = result * base;
      e >>= 1;
      if (e > 0) base = base * base;
    }
    return result;
  }
  if (is_monomial()) {
    const Term& t = node_->terms[0];
    Expr result(t.coeff.pow(exponent));
    for (const auto& f : t.mono) result = result * atom_power(f.atom, f.exponent * exponent);
    return result;
  }
  // Multi-term sum: normalize the leading coefficient to 1 so that scalar
  // multiples share one atom.
  Rational lead = node_->terms.front().coeff;
  Expr scaled = *this * Expr(lead.reciprocal());
  return Expr(lead.pow(exponent)) * atom_power(Atom{AtomKind::ReciprocalSum, -1, scaled}, exponent);
}

Expr Expr::diff(int id) const {
  Expr result;
  for (const auto& t : node_->terms) {
    for (std::size_t j = 0; j < t.mono.size(); ++j) {
      const Factor& f = t.mono[j];
      Expr inner = atom_derivative(f.atom, id);
      if (inner.is_zero()) continue;
      Term rest{t.coeff * Rational(f.exponent), {}};
      for (std::size_t m = 0; m < t.mono.size(); ++m)
        if (m != j) rest.mono.push_back(t.mono[m]);
      Expr piece = ExprBuilder::make({rest}) * atom_power(f.atom, f.exponent - 1) * inner;
      result += piece;
    }
  }
  return result;
}

Expr Expr::substitute(const std::map<int, Expr>& values) const {
  Expr result;
  for (const auto& t : node_->terms) {
    Expr term(t.coeff);
    for (const auto& f : t.mono) {
      Expr base;
      switch (f.atom.kind) {
        case AtomKind::Symbol: {
          auto it = values.find(f.atom.symbol);
          base = it != values.end() ? it->second : Expr::symbol(f.atom.symbol);
          break;
        }
        case AtomKind::Exp: base = exp(f.atom.arg.substitute(values)); break;
        case AtomKind::Sin: base = sin(f.atom.arg.substitute(values)); break;
        case AtomKind::Cos: base = cos(f.atom.arg.substitute(values)); break;
        case AtomKind::Log: base = log(f.atom.arg.substitute(values)); break;
        case AtomKind::Sqrt: {
          Expr arg = f.atom.arg.substitute(values);
          term = term * (f.exponent == 1 ? sqrt(arg) : atom_power(Atom{AtomKind::Sqrt, -1, arg}, f.exponent));
          continue;
        }
        case AtomKind::ReciprocalSum: base = f.atom.arg.substitute(values); break;
      }
      term = term * base.pow(f.exponent);
    }
    result += term;
  }
  return result;
}

double Expr::evaluate(std::span<const double> values) const {
  double total = 0.0;
  for (const auto& t : node_->terms) {
    double v = t.coeff.to_double();
    for (const auto& f : t.mono) v *= ipow(evaluate_atom(f.atom, values), f.exponent);
    total += v;
  }
  return total;
}

std::set<int> Expr::symbols() const {
  std::set<int> out;
  collect_symbols(*this, out);
  return out;
}

bool Expr::depends_on(int id) const {
  for (const auto& t : node_->terms)
    for (const auto& f : t.mono) {
      if (f.atom.kind == AtomKind::Symbol) {
        if (f.atom.symbol == id) return true;
      } else if (f.atom.arg.depends_on(id)) {
        return true;
      }
    }
  return false;
}

bool Expr::depends_on_any(const std::set<int>& ids) const {
  for (int id : symbols())
    if (ids.count(id)) return true;
  return false;
}

std::optional<int> Expr::polynomial_degree(const std::set<int>& ids) const {
  int best = 0;
  for (const auto& t : node_->terms) {
    int degree = 0;
    for (const auto& f : t.mono) {
      if (f.atom.kind == AtomKind::Symbol) {
        if (ids.count(f.atom.symbol)) {
          if (f.exponent < 0) return std::nullopt;
          degree += f.exponent;
        }
      } else if (f.atom.arg.depends_on_any(ids)) {
        return std::nullopt;
      }
    }
    best = std::max(best, degree);
  }
  return best;
}

std::string Expr::str(const std::function<std::string(int)>& name) const {
  if (is_zero()) return "0";
  std::ostringstream out;
  bool first = true;
  for (const auto& t : node_->terms) {
    Rational c = t.coeff;
    if (first) {
      if (c.sign() < 0) out << "-";
    } else {
      out << (c.sign() < 0 ? " - " : " + ");
    }
    first = false;
    Rational mag = c.sign() < 0 ? -c : c;
    bool need_star = false;
    if (t.mono.empty() || !mag.is_one()) {
      out << mag.str();
      need_star = true;
    }
    for (const auto& f : t.mono) {
      if (need_star) out << "*";
      need_star = true;
      std::string base;
      if (f.atom.kind == AtomKind::Symbol) {
        base = name(f.atom.symbol);
      } else if (f.atom.kind == AtomKind::ReciprocalSum) {
        base = "(" + f.atom.arg.str(name) + ")";
      } else {
        base = std::string(function_name(f.atom.kind)) + "(" + f.atom.arg.str(name) + ")";
      }
      out << base;
      if (f.exponent < 0)
        out << "^(" << f.exponent << ")";
      else if (f.exponent != 1)
        out << "^" << f.exponent;
    }
  }
  return out.str();
}

std::string Expr::str() const {
  return str([](int id) { return "s" + std::to_string(id); });
}

Expr exp(const Expr& e) {
  if (e.is_zero()) return Expr(1);
  return make_function(AtomKind::Exp, e);
}

Expr sin(const Expr& e) {
  if (e.is_zero()) return Expr();
  return make_function(AtomKind::Sin, e);
}

Expr cos(const Expr& e) {
  if (e.is_zero()) return Expr(1);
  return make_function(AtomKind::Cos, e);
}

Expr sqrt(const Expr& e) {
  if (auto c = e.constant_value()) {
    if (c->is_zero()) return Expr();
    auto n = exact_isqrt(c->num());
    auto d = exact_isqrt(c->den());
    if (n && d) return Expr(Rational(*n, *d));
  }
  return make_function(AtomKind::Sqrt, e);
}

Expr log(const Expr& e) {
  if (auto c = e.constant_value(); c && c->is_one()) return Expr();
  return make_function(AtomKind::Log, e);
}

}  // namespace pataplectic
