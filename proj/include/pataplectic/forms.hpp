#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>

#include "pataplectic/chart.hpp"
#include "pataplectic/expr.hpp"
#include "pataplectic/expr_tools.hpp"

namespace pataplectic {

struct FormTag {};
struct VectorTag {};

/// Sparse antisymmetric tensor over the coordinates 0..dim-1, keyed by sorted
/// index. Differential forms and multivector fields share this storage.
template <class Tag>
class Graded {
 public:
  Graded() = default;
  Graded(int dim, int degree) : dim_(dim), degree_(degree) {}

  /// Degree-0 element with the given value.
  static Graded scalar(int dim, const Expr& value) {
    Graded g(dim, 0);
    g.add({}, value);
    return g;
  }
  /// dq^mu for forms, d/dq^mu for multivectors.
  static Graded basis(int dim, int mu, const Expr& coeff = Expr(1)) {
    Graded g(dim, 1);
    g.add({mu}, coeff);
    return g;
  }

  int dim() const { return dim_; }
  int degree() const { return degree_; }
  const std::map<Index, Expr>& terms() const { return terms_; }
  bool empty() const { return terms_.empty(); }

  /// Accumulates `coeff` on an arbitrary (possibly unsorted) index.
  void add(std::span<const int> index, const Expr& coeff) {
    if (static_cast<int>(index.size()) != degree_) throw std::invalid_argument("index length differs from degree");
    if (coeff.is_zero()) return;
    Canonical c = canonicalize(index, dim_);
    if (c.sign == 0) return;
    auto [it, inserted] = terms_.try_emplace(c.index, Expr());
    it->second += c.sign > 0 ? coeff : -coeff;
    if (it->second.is_zero()) terms_.erase(it);
  }
  void add(std::initializer_list<int> index, const Expr& coeff) {
    std::vector<int> v(index);
    add(std::span<const int>(v), coeff);
  }

  /// Coefficient on an arbitrary index, with the permutation sign applied.
  Expr coeff(std::span<const int> index) const {
    Canonical c = canonicalize(index, dim_);
    if (c.sign == 0) return Expr();
    auto it = terms_.find(c.index);
    if (it == terms_.end()) return Expr();
    return c.sign > 0 ? it->second : -it->second;
  }
  Expr coeff(std::initializer_list<int> index) const {
    std::vector<int> v(index);
    return coeff(std::span<const int>(v));
  }

  Graded map(const std::function<Expr(const Expr&)>& f) const {
    Graded out(dim_, degree_);
    for (const auto& [k, v] : terms_) out.add(k, f(v));
    return out;
  }

  friend Graded operator+(const Graded& a, const Graded& b) {
    a.check_compatible(b);
    Graded out = a;
    for (const auto& [k, v] : b.terms_) out.add(k, v);
    return out;
  }
  friend Graded operator-(const Graded& a, const Graded& b) { return a + (-b); }
  Graded operator-() const {
    return map([](const Expr& e) { return -e; });
  }
  friend Graded operator*(const Expr& s, const Graded& a) {
    return a.map([&](const Expr& e) { return s * e; });
  }
  Graded& operator+=(const Graded& o) { return *this = *this + o; }
  Graded& operator-=(const Graded& o) { return *this = *this - o; }

  friend bool operator==(const Graded& a, const Graded& b) {
    return a.dim_ == b.dim_ && a.degree_ == b.degree_ && a.terms_ == b.terms_;
  }

  void check_compatible(const Graded& o) const {
    if (dim_ != o.dim_) throw std::invalid_argument("chart mismatch between operands");
    if (degree_ != o.degree_) throw std::invalid_argument("degree mismatch in sum");
  }

 private:
  int dim_ = 0;
  int degree_ = 0;
  std::map<Index, Expr> terms_;
};

using DifferentialForm = Graded<FormTag>;
using MultiVectorField = Graded<VectorTag>;
using VectorField = MultiVectorField;

DifferentialForm wedge(const DifferentialForm& a, const DifferentialForm& b);
MultiVectorField wedge(const MultiVectorField& a, const MultiVectorField& b);
/// X_1 ^ ... ^ X_m from vector factors; components are the m x m minors.
MultiVectorField wedge_factors(const std::vector<VectorField>& factors);

/// X ⌟ a with the factors of X filling the first slots of a, so that
/// (X_1 ^ X_2) ⌟ a = X_2 ⌟ (X_1 ⌟ a).
DifferentialForm interior(const MultiVectorField& x, const DifferentialForm& a);
/// Full contraction of an m-vector with an m-form.
Expr pairing(const MultiVectorField& x, const DifferentialForm& a);

DifferentialForm exterior_derivative(const DifferentialForm& a);
DifferentialForm lie_derivative(const VectorField& xi, const DifferentialForm& a);
VectorField lie_bracket(const VectorField& a, const VectorField& b);
/// Directional derivative xi(f).
Expr apply(const VectorField& xi, const Expr& f);

DifferentialForm substitute(const DifferentialForm& a, const std::map<int, Expr>& values);

/// True when every coefficient is zero symbolically or at the sampled points.
bool is_zero_form(const DifferentialForm& a, const ZeroTestOptions& opts = {});
bool is_zero_field(const MultiVectorField& a, const ZeroTestOptions& opts = {});
/// Largest numeric residual over the coefficients (0 if symbolically zero).
double form_residual(const DifferentialForm& a, const ZeroTestOptions& opts = {});

std::string to_string(const DifferentialForm& a, const Chart& chart);
std::string to_string(const MultiVectorField& a, const Chart& chart);

// Chart-level structures.
DifferentialForm base_volume(const Chart& chart);  // g dx^1 ^ ... ^ dx^n
/// ∂_{alphas} ⌟ omega with the base directions filling the first slots.
DifferentialForm volume_contraction(const Chart& chart, const std::vector<int>& alphas);
DifferentialForm cartan_form(const Chart& chart);
DifferentialForm pataplectic_form(const Chart& chart);
/// Cartan form assembled from the unrestricted antisymmetrized sum with the
/// 1/(p!)^2 normalization; must agree with cartan_form.
DifferentialForm cartan_form_unrestricted(const Chart& chart);

}  // namespace pataplectic
