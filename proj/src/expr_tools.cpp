#include "pataplectic/expr_tools.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace pataplectic {
namespace {

double int_power(double base, int exponent) {
  if (exponent < 0) return 1.0 / int_power(base, -exponent);
  double r = 1.0;
  for (int i = 0; i < exponent; ++i) r *= base;
  return r;
}

double atom_value(const Atom& atom, std::span<const double> values) {
  if (atom.kind == AtomKind::Symbol) return values[static_cast<std::size_t>(atom.symbol)];
  double a = atom.arg.evaluate(values);
  switch (atom.kind) {
    case AtomKind::Exp: return std::exp(a);
    case AtomKind::Sin: return std::sin(a);
    case AtomKind::Cos: return std::cos(a);
    case AtomKind::Sqrt: return std::sqrt(a);
    case AtomKind::Log: return std::log(a);
    default: return a;
  }
}

double term_scale(const Expr& e, std::span<const double> values) {
  double scale = 0.0;
  for (const auto& t : e.node().terms) {
    double v = std::abs(t.coeff.to_double());
    for (const auto& f : t.mono) v *= std::abs(int_power(atom_value(f.atom, values), f.exponent));
    scale += v;
  }
  return scale;
}

}  // namespace

double numeric_residual(const Expr& e, const ZeroTestOptions& opts) {
  if (e.is_zero()) return 0.0;
  auto syms = e.symbols();
  std::size_t width = syms.empty() ? 1 : static_cast<std::size_t>(*syms.rbegin()) + 1;
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> dist(opts.lo, opts.hi);
  std::vector<double> values(width, 0.0);
  double worst = 0.0;
  int finite_points = 0;
  for (int k = 0; k < opts.points; ++k) {
    for (auto& v : values) v = dist(rng);
    double value = e.evaluate(values);
    double scale = term_scale(e, values);
    if (!std::isfinite(value) || !std::isfinite(scale)) continue;
    ++finite_points;
    worst = std::max(worst, std::abs(value) / std::max(1.0, scale));
  }
  if (finite_points == 0) return std::numeric_limits<double>::infinity();
  return worst;
}

bool is_zero_value(const Expr& e, const ZeroTestOptions& opts) {
  if (e.is_zero()) return true;
  if (e.is_constant()) return false;
  return numeric_residual(e, opts) <= opts.tolerance;
}

CompiledExpr::CompiledExpr(const Expr& e) {
  for (const auto& t : e.node().terms) {
    TermRow row{t.coeff.to_double(), static_cast<std::uint32_t>(factors_.size()), 0};
    for (const auto& f : t.mono) {
      int slot = -1;
      for (std::size_t a = 0; a < atoms_.size(); ++a) {
        const AtomSlot& s = atoms_[a];
        if (s.kind != f.atom.kind) continue;
        if (s.kind == AtomKind::Symbol ? s.symbol == f.atom.symbol : false) {
          slot = static_cast<int>(a);
          break;
        }
      }
      if (slot < 0) {
        AtomSlot s{f.atom.kind, f.atom.symbol, -1};
        if (f.atom.kind != AtomKind::Symbol) {
          s.arg = static_cast<int>(args_.size());
          args_.emplace_back(f.atom.arg);
        }
        slot = static_cast<int>(atoms_.size());
        atoms_.push_back(s);
      }
      factors_.push_back({slot, f.exponent});
    }
    row.end = static_cast<std::uint32_t>(factors_.size());
    terms_.push_back(row);
  }
}

double CompiledExpr::operator()(std::span<const double> values) const {
  constexpr std::size_t kInline = 32;
  double inline_buf[kInline];
  std::vector<double> heap;
  double* atom_values = inline_buf;
  if (atoms_.size() > kInline) {
    heap.resize(atoms_.size());
    atom_values = heap.data();
  }
  for (std::size_t a = 0; a < atoms_.size(); ++a) {
    const AtomSlot& s = atoms_[a];
    switch (s.kind) {
      case AtomKind::Symbol: atom_values[a] = values[static_cast<std::size_t>(s.symbol)]; break;
      case AtomKind::Exp: atom_values[a] = std::exp(args_[s.arg](values)); break;
      case AtomKind::Sin: atom_values[a] = std::sin(args_[s.arg](values)); break;
      case AtomKind::Cos: atom_values[a] = std::cos(args_[s.arg](values)); break;
      case AtomKind::Sqrt: atom_values[a] = std::sqrt(args_[s.arg](values)); break;
      case AtomKind::Log: atom_values[a] = std::log(args_[s.arg](values)); break;
      case AtomKind::ReciprocalSum: atom_values[a] = args_[s.arg](values); break;
    }
  }
  double total = 0.0;
  for (const auto& row : terms_) {
    double v = row.coeff;
    for (std::uint32_t f = row.begin; f < row.end; ++f) {
      const FactorSlot& fs = factors_[f];
      double base = atom_values[fs.atom];
      int e = fs.exponent;
      if (e == 1) {
        v *= base;
      } else if (e == 2) {
        v *= base * base;
      } else {
        v *= int_power(base, e);
      }
    }
    total += v;
  }
  return total;
}

}  // namespace pataplectic
