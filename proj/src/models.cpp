#include "pataplectic/models.hpp"

#include <cmath>

namespace pataplectic {

Expr volume_weight_of(const ExprMatrix& metric) {
  Expr det = metric.determinant();
  std::vector<double> sample(64, 0.5);
  double value = det.evaluate(sample);
  if (value == 0.0 || !std::isfinite(value)) throw std::invalid_argument("metric is degenerate at the sample point");
  return sqrt(value > 0 ? det : -det);
}

ScalarFieldModel build_scalar_model(const Chart& chart, const ExprMatrix& metric, const Expr& potential) {
  const int n = chart.n(), k = chart.k();
  if (metric.rows() != n || metric.cols() != n) throw std::invalid_argument("metric must be n x n");
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      if (!is_zero_value(metric(a, b) - metric(b, a))) throw std::invalid_argument("metric must be symmetric");
  auto inverse = metric.inverse();
  if (!inverse) throw std::invalid_argument("metric is singular");
  Chart weighted = chart.with_volume_weight(volume_weight_of(metric));
  Expr l = -potential;
  Expr h = Expr::symbol(weighted.eps()) + potential;
  std::vector<Expr> velocity(static_cast<std::size_t>(n * k));
  const Expr half(Rational(1, 2));
  for (int i = 0; i < k; ++i) {
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        l += half * (*inverse)(a, b) * Expr::symbol(weighted.velocity(i, a)) * Expr::symbol(weighted.velocity(i, b));
        Expr pa = Expr::symbol(*weighted.momentum_symbol({a}, {i}));
        Expr pb = Expr::symbol(*weighted.momentum_symbol({b}, {i}));
        h += half * metric(a, b) * pa * pb;
        velocity[static_cast<std::size_t>(i * n + a)] += metric(a, b) * pb;
      }
    }
  }
  LagrangianModel lagrangian(weighted, l);
  HamiltonianModel hamiltonian = HamiltonianModel::assemble(lagrangian, h, velocity);
  return ScalarFieldModel{weighted, metric, *inverse, potential, lagrangian, hamiltonian};
}

ScalarFieldModel klein_gordon_preset(int n, Rational mass, std::optional<Expr> potential) {
  Chart chart = Chart::weyl(n, 1);
  ExprMatrix metric(n, n);
  metric(0, 0) = Expr(1);
  for (int a = 1; a < n; ++a) metric(a, a) = Expr(-1);
  Expr y = Expr::symbol(chart.y(0));
  Expr v = potential ? *potential : Expr(mass * mass * Rational(1, 2)) * y * y;
  return build_scalar_model(chart, metric, v);
}

StringModel build_string_model(const Chart& chart, const ExprMatrix& metric, const ExprMatrix& target_metric,
                               const ExprMatrix& b_form) {
  if (chart.n() != 2) throw std::invalid_argument("string model needs a two-dimensional base");
  const int k = chart.k();
  if (!chart.momentum_degrees().count(1) || (k >= 2 && !chart.momentum_degrees().count(2)))
    throw std::invalid_argument("string chart needs momentum degrees {0,1,2}");
  if (target_metric.rows() != k || b_form.rows() != k) throw std::invalid_argument("target tensors must be k x k");
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      if (!is_zero_value(target_metric(i, j) - target_metric(j, i)))
        throw std::invalid_argument("target metric must be symmetric");
      if (!is_zero_value(b_form(i, j) + b_form(j, i))) throw std::invalid_argument("b must be antisymmetric");
    }
  auto inverse = metric.inverse();
  if (!inverse) throw std::invalid_argument("worldsheet metric is singular");
  if (!target_metric.inverse()) throw std::invalid_argument("target metric is singular");
  Expr g = volume_weight_of(metric);
  Chart weighted = chart.with_volume_weight(g);
  Expr inv_g = g.pow(-1);
  const int m = 2 * k;
  ExprMatrix G(m, m), M(m, m);
  auto levi = [](int a, int b) { return a == b ? 0 : (a < b ? 1 : -1); };
  for (int i = 0; i < k; ++i)
    for (int a = 0; a < 2; ++a)
      for (int j = 0; j < k; ++j)
        for (int b = 0; b < 2; ++b) {
          Expr entry = target_metric(i, j) * (*inverse)(a, b) + Expr(levi(a, b)) * b_form(i, j) * inv_g;
          G(i * 2 + a, j * 2 + b) = entry;
          Expr pij;
          if (i != j) {
            int lo = std::min(i, j), hi = std::max(i, j);
            pij = Expr(i < j ? 1 : -1) * Expr::symbol(*weighted.momentum_symbol({0, 1}, {lo, hi}));
          }
          M(i * 2 + a, j * 2 + b) = entry - Expr(levi(a, b)) * pij;
        }
  Expr l;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) {
      if (G(r, c).is_zero()) continue;
      l += Expr(Rational(1, 2)) * G(r, c) * Expr::symbol(weighted.velocity(r / 2, r % 2)) *
           Expr::symbol(weighted.velocity(c / 2, c % 2));
    }
  LagrangianModel lagrangian(weighted, l);
  BuildOptions opts;
  opts.max_symbolic_size = 2;
  HamiltonianModel hamiltonian = build_hamiltonian(lagrangian, opts);
  return StringModel{weighted, metric, *inverse, target_metric, b_form, g, G, M, lagrangian, hamiltonian};
}

StringModel harmonic_map_preset(int k) {
  Chart chart(2, k, {0, 1, 2});
  ExprMatrix eye2 = ExprMatrix::identity(2);
  ExprMatrix h = ExprMatrix::identity(k);
  ExprMatrix b(k, k);
  return build_string_model(chart, eye2, h, b);
}

Eigen::MatrixXd StringModel::M_value(std::span<const double> coords) const {
  const int m = M.rows();
  std::vector<double> values(static_cast<std::size_t>(chart.symbol_count()), 0.0);
  std::copy(coords.begin(), coords.begin() + chart.dim(), values.begin());
  Eigen::MatrixXd out(m, m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) out(r, c) = M(r, c).evaluate(values);
  return out;
}

Eigen::MatrixXd StringModel::K_value(std::span<const double> coords) const {
  Eigen::MatrixXd m = M_value(coords);
  double cond = condition_number(m);
  if (!(cond <= 1e12)) throw SingularHessian("M is singular at the point", cond);
  return m.partialPivLu().solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

Eigen::MatrixXd StringModel::dM_dy_value(int field, std::span<const double> coords) const {
  const int m = M.rows();
  std::vector<double> values(static_cast<std::size_t>(chart.symbol_count()), 0.0);
  std::copy(coords.begin(), coords.begin() + chart.dim(), values.begin());
  Eigen::MatrixXd out(m, m);
  int y = chart.y(field);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) out(r, c) = M(r, c).diff(y).evaluate(values);
  return out;
}

std::map<int, double> StringModel::R_momenta(std::span<const double> q) const {
  std::vector<double> values(static_cast<std::size_t>(chart.symbol_count()), 0.0);
  std::copy(q.begin(), q.begin() + chart.n() + chart.k(), values.begin());
  double gv = weight.evaluate(values);
  std::map<int, double> out;
  for (int i = 0; i < chart.k(); ++i)
    for (int j = i + 1; j < chart.k(); ++j)
      out[*chart.momentum_symbol({0, 1}, {i, j})] = b_form(i, j).evaluate(values) / gv;
  return out;
}

void StringModel::project_to_R(std::vector<double>& coords) const {
  for (const auto& [sym, value] : R_momenta(coords)) coords[static_cast<std::size_t>(sym)] = value;
}

}  // namespace pataplectic
