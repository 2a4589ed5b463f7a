#include "pataplectic/legendre.hpp"

#include <cmath>
#include <limits>

#include "pataplectic/matrix.hpp"

namespace pataplectic {
namespace {

// det of v[fields][alphas] as an expression in the velocity symbols.
Expr velocity_minor(const Chart& chart, const std::vector<int>& fields, const std::vector<int>& alphas) {
  const int p = static_cast<int>(fields.size());
  if (p == 0) return Expr(1);
  ExprMatrix m(p, p);
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < p; ++c)
      m(r, c) = Expr::symbol(chart.velocity(fields[static_cast<std::size_t>(r)], alphas[static_cast<std::size_t>(c)]));
  return m.determinant();
}

double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

double richardson(const std::function<double(double)>& f, double x0) {
  double h = 1e-3 * std::max(1.0, std::abs(x0));
  auto central = [&](double step) { return (f(x0 + step) - f(x0 - step)) / (2 * step); };
  double d1 = central(h);
  double d2 = central(h / 2);
  double d4 = central(h / 4);
  double r1 = (4 * d2 - d1) / 3;
  double r2 = (4 * d4 - d2) / 3;
  return (16 * r2 - r1) / 15;
}

}  // namespace

Expr pairing_expression(const Chart& chart) {
  Expr out;
  for (const auto& m : chart.momenta()) out += Expr::symbol(m.symbol) * velocity_minor(chart, m.fields, m.alphas);
  return out;
}

Eigen::MatrixXd tangent_matrix(const Chart& chart, std::span<const double> velocity) {
  const int n = chart.n(), k = chart.k();
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n + k, n);
  for (int a = 0; a < n; ++a) z(a, a) = 1.0;
  for (int i = 0; i < k; ++i)
    for (int a = 0; a < n; ++a) z(n + i, a) = velocity[static_cast<std::size_t>(i * n + a)];
  return z;
}

double pairing_value(const Chart& chart, std::span<const double> coords, const Eigen::MatrixXd& z) {
  const int n = chart.n();
  double total = 0.0;
  Eigen::MatrixXd sub(n, n);
  for (const auto& m : chart.momenta()) {
    double p = coords[static_cast<std::size_t>(m.symbol)];
    if (p == 0.0) continue;
    for (int r = 0; r < n; ++r) sub.row(r) = z.row(m.slots[static_cast<std::size_t>(r)]);
    total += p * sub.determinant();
  }
  return total;
}

double condition_number(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 1.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  double smin = s(s.size() - 1);
  if (smin == 0.0 || !std::isfinite(smin)) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

LagrangianModel::LagrangianModel(Chart chart, Expr lagrangian)
    : chart_(std::move(chart)), lagrangian_(std::move(lagrangian)) {
  for (int s : lagrangian_.symbols())
    if (chart_.is_momentum(s) || s >= chart_.symbol_count())
      throw std::invalid_argument("Lagrangian may depend on x, y and velocities only (found " + chart_.name(s) + ")");
  auto impl = std::make_shared<Impl>();
  const int nv = velocity_count();
  std::set<int> vel;
  for (int i = 0; i < nv; ++i) vel.insert(chart_.dim() + i);
  auto degree = lagrangian_.polynomial_degree(vel);
  impl->quadratic = degree.has_value() && *degree <= 2;
  impl->w = pairing_expression(chart_) - lagrangian_;
  for (int a = 0; a < nv; ++a) impl->grad.push_back(impl->w.diff(chart_.dim() + a));
  for (int a = 0; a < nv; ++a)
    for (int b = 0; b < nv; ++b) impl->hess.push_back(impl->grad[static_cast<std::size_t>(a)].diff(chart_.dim() + b));
  impl->l_c = CompiledExpr(lagrangian_);
  impl->w_c = CompiledExpr(impl->w);
  for (const auto& e : impl->grad) impl->grad_c.emplace_back(e);
  for (const auto& e : impl->hess) impl->hess_c.emplace_back(e);
  for (int mu = 0; mu < chart_.n() + chart_.k(); ++mu) impl->lq_c.emplace_back(lagrangian_.diff(mu));
  for (int a = 0; a < nv; ++a) impl->lv_c.emplace_back(lagrangian_.diff(chart_.dim() + a));
  impl_ = std::move(impl);
}

std::vector<double> LagrangianModel::pack(std::span<const double> coords, std::span<const double> velocity) const {
  std::vector<double> values(static_cast<std::size_t>(chart_.symbol_count()), 0.0);
  std::copy(coords.begin(), coords.begin() + std::min<std::ptrdiff_t>(coords.size(), chart_.dim()), values.begin());
  std::copy(velocity.begin(), velocity.end(), values.begin() + chart_.dim());
  return values;
}

double LagrangianModel::lagrangian_value(std::span<const double> q, std::span<const double> v) const {
  return impl_->l_c(pack(q, v));
}

Eigen::VectorXd LagrangianModel::w_gradient_value(std::span<const double> values) const {
  Eigen::VectorXd g(velocity_count());
  for (int a = 0; a < velocity_count(); ++a) g(a) = impl_->grad_c[static_cast<std::size_t>(a)](values);
  return g;
}

Eigen::MatrixXd LagrangianModel::w_hessian_value(std::span<const double> values) const {
  const int nv = velocity_count();
  Eigen::MatrixXd h(nv, nv);
  for (int a = 0; a < nv; ++a)
    for (int b = 0; b < nv; ++b) h(a, b) = impl_->hess_c[static_cast<std::size_t>(a * nv + b)](values);
  return h;
}

std::vector<double> LagrangianModel::lagrangian_q_gradient(std::span<const double> q, std::span<const double> v) const {
  auto values = pack(q, v);
  std::vector<double> out;
  for (const auto& c : impl_->lq_c) out.push_back(c(values));
  return out;
}

std::vector<double> LagrangianModel::lagrangian_v_gradient(std::span<const double> q, std::span<const double> v) const {
  auto values = pack(q, v);
  std::vector<double> out;
  for (const auto& c : impl_->lv_c) out.push_back(c(values));
  return out;
}

std::vector<double> legendre_forward(const LagrangianModel& model, std::span<const double> q,
                                     std::span<const double> v, double w, const std::map<int, double>& higher) {
  const Chart& chart = model.chart();
  std::vector<double> coords(static_cast<std::size_t>(chart.dim()), 0.0);
  std::copy(q.begin(), q.begin() + chart.n() + chart.k(), coords.begin());
  for (const auto& [sym, value] : higher) {
    if (!chart.is_momentum(sym) || chart.momentum_of(sym).degree() < 2)
      throw std::invalid_argument("higher momenta must have degree >= 2");
    coords[static_cast<std::size_t>(sym)] = value;
  }
  auto values = model.pack(coords, v);
  Eigen::VectorXd g = model.w_gradient_value(values);
  for (int i = 0; i < chart.k(); ++i)
    for (int a = 0; a < chart.n(); ++a) {
      int sym = *chart.momentum_symbol({a}, {i});
      coords[static_cast<std::size_t>(sym)] = -g(i * chart.n() + a);
    }
  values = model.pack(coords, v);
  coords[static_cast<std::size_t>(chart.eps())] = w - model.w_value(values);
  return coords;
}

std::map<int, Expr> legendre_forward_expressions(const LagrangianModel& model, const Expr& w) {
  const Chart& chart = model.chart();
  std::map<int, Expr> out;
  Expr sum_pv;
  for (int i = 0; i < chart.k(); ++i)
    for (int a = 0; a < chart.n(); ++a) {
      Expr p = model.lagrangian().diff(chart.velocity(i, a));
      out[*chart.momentum_symbol({a}, {i})] = p;
      sum_pv += p * Expr::symbol(chart.velocity(i, a));
    }
  out[chart.eps()] = w + model.lagrangian() - sum_pv;
  return out;
}

InvertResult legendre_invert(const LagrangianModel& model, std::span<const double> coords, const InvertOptions& opts) {
  const int nv = model.velocity_count();
  std::vector<double> v = opts.initial.empty() ? std::vector<double>(static_cast<std::size_t>(nv), 0.0) : opts.initial;
  InvertResult result;
  auto values = model.pack(coords, v);
  auto set_v = [&](const std::vector<double>& vv) {
    std::copy(vv.begin(), vv.end(), values.begin() + model.chart().dim());
  };
  Eigen::VectorXd g = model.w_gradient_value(values);
  double r = max_abs(g);
  result.residual_history.push_back(r);
  const int limit = model.quadratic() ? 2 : opts.max_iter;
  for (int it = 0; it <= limit; ++it) {
    if (r <= opts.tol) {
      result.velocity = v;
      result.residual = r;
      result.iterations = it;
      return result;
    }
    if (it == limit) break;
    Eigen::MatrixXd h = model.w_hessian_value(values);
    double cond = condition_number(h);
    result.condition = cond;
    if (!(cond <= opts.max_condition))
      throw SingularHessian("d2W/dv2 is singular at the iterate (condition " + std::to_string(cond) + ")", cond);
    Eigen::VectorXd step = -h.partialPivLu().solve(g);
    double t = 1.0;
    std::vector<double> trial(v.size());
    for (;;) {
      for (int a = 0; a < nv; ++a) trial[static_cast<std::size_t>(a)] = v[static_cast<std::size_t>(a)] + t * step(a);
      set_v(trial);
      Eigen::VectorXd gt = model.w_gradient_value(values);
      double rt = max_abs(gt);
      if (rt <= r || t < 1e-10 || model.quadratic()) {
        v = trial;
        g = gt;
        r = rt;
        break;
      }
      t *= 0.5;
    }
    result.residual_history.push_back(r);
  }
  // A quadratic model that misses the tolerance after the linear solve is
  // ill-conditioned rather than slow; report the residual reached.
  if (model.quadratic() && std::isfinite(r) && r <= 1e3 * opts.tol) {
    result.velocity = v;
    result.residual = r;
    result.iterations = 1;
    return result;
  }
  throw NoConvergence("Newton inversion did not reach tolerance (residual " + std::to_string(r) + ")");
}

const Expr& HamiltonianModel::expression() const {
  if (!impl_->expression) throw std::logic_error("Hamiltonian has no closed form");
  return *impl_->expression;
}

HamiltonianModel HamiltonianModel::from_expression(Chart chart, Expr hamiltonian, std::vector<Expr> velocity) {
  auto impl = std::make_shared<Impl>();
  impl->chart = std::move(chart);
  impl->value_c = CompiledExpr(hamiltonian);
  for (int mu = 0; mu < impl->chart.dim(); ++mu) impl->grad_c.emplace_back(hamiltonian.diff(mu));
  for (const auto& e : velocity) impl->velocity_c.emplace_back(e);
  impl->expression = std::move(hamiltonian);
  impl->velocity = std::move(velocity);
  return HamiltonianModel(std::move(impl));
}

HamiltonianModel HamiltonianModel::assemble(LagrangianModel lagrangian, std::optional<Expr> expression,
                                            std::vector<Expr> velocity) {
  auto impl = std::make_shared<Impl>();
  impl->chart = lagrangian.chart();
  if (expression) {
    impl->value_c = CompiledExpr(*expression);
    for (int mu = 0; mu < impl->chart.dim(); ++mu) impl->grad_c.emplace_back(expression->diff(mu));
  }
  for (const auto& e : velocity) impl->velocity_c.emplace_back(e);
  for (int mu = 0; mu < impl->chart.dim(); ++mu)
    impl->w_coord_grad_c.emplace_back(lagrangian.generating_function().diff(mu));
  impl->expression = std::move(expression);
  impl->velocity = std::move(velocity);
  impl->lagrangian = std::move(lagrangian);
  return HamiltonianModel(std::move(impl));
}

std::vector<double> HamiltonianModel::velocity(std::span<const double> coords) const {
  if (!impl_->velocity_c.empty()) {
    std::vector<double> values(static_cast<std::size_t>(impl_->chart.symbol_count()), 0.0);
    std::copy(coords.begin(), coords.begin() + impl_->chart.dim(), values.begin());
    std::vector<double> v;
    for (const auto& c : impl_->velocity_c) v.push_back(c(values));
    return v;
  }
  if (!impl_->lagrangian) throw std::logic_error("Hamiltonian has no velocity map");
  return legendre_invert(*impl_->lagrangian, coords).velocity;
}

double HamiltonianModel::value(std::span<const double> coords) const {
  if (impl_->expression) return impl_->value_c(coords);
  auto v = velocity(coords);
  return impl_->lagrangian->w_value(impl_->lagrangian->pack(coords, v));
}

std::vector<double> HamiltonianModel::gradient(std::span<const double> coords) const {
  std::vector<double> out;
  if (impl_->expression) {
    for (const auto& c : impl_->grad_c) out.push_back(c(coords));
    return out;
  }
  // Envelope: dH/dcoord = dW/dcoord at the critical velocity.
  auto values = impl_->lagrangian->pack(coords, velocity(coords));
  for (const auto& c : impl_->w_coord_grad_c) out.push_back(c(values));
  return out;
}

bool HamiltonianModel::in_domain(std::span<const double> coords) const {
  if (!impl_->lagrangian) return std::isfinite(value(coords));
  try {
    auto v = velocity(coords);
    auto h = impl_->lagrangian->w_hessian_value(impl_->lagrangian->pack(coords, v));
    return condition_number(h) <= 1e12;
  } catch (const std::exception&) {
    return false;
  }
}

HamiltonianModel build_hamiltonian(const LagrangianModel& lagrangian, const BuildOptions& opts) {
  const Chart& chart = lagrangian.chart();
  const int nv = lagrangian.velocity_count();
  if (!lagrangian.quadratic() || !opts.symbolic) return HamiltonianModel::assemble(lagrangian, std::nullopt, {});
  // W = c + b.v + 1/2 v^T A v with A the (v-independent) Hessian.
  std::map<int, Expr> at_zero;
  for (int a = 0; a < nv; ++a) at_zero[chart.dim() + a] = Expr();
  ExprMatrix a_mat(nv, nv);
  for (int r = 0; r < nv; ++r)
    for (int c = 0; c < nv; ++c) a_mat(r, c) = lagrangian.w_hessian()[static_cast<std::size_t>(r * nv + c)];
  if (!a_mat.is_diagonal() && nv > opts.max_symbolic_size) return HamiltonianModel::assemble(lagrangian, std::nullopt, {});
  auto inv = a_mat.inverse();
  if (!inv) throw SingularHessian("d2W/dv2 is identically singular");
  std::vector<Expr> b(static_cast<std::size_t>(nv));
  for (int r = 0; r < nv; ++r) b[static_cast<std::size_t>(r)] = lagrangian.w_gradient()[static_cast<std::size_t>(r)].substitute(at_zero);
  Expr c = lagrangian.generating_function().substitute(at_zero);
  std::vector<Expr> velocity(static_cast<std::size_t>(nv));
  Expr h = c;
  for (int r = 0; r < nv; ++r) {
    Expr vr;
    for (int s = 0; s < nv; ++s)
      if (!(*inv)(r, s).is_zero()) vr -= (*inv)(r, s) * b[static_cast<std::size_t>(s)];
    velocity[static_cast<std::size_t>(r)] = vr;
    h += Expr(Rational(1, 2)) * b[static_cast<std::size_t>(r)] * vr;
  }
  return HamiltonianModel::assemble(lagrangian, h, velocity);
}

DHReport verify_dH(const HamiltonianModel& model, std::span<const double> coords) {
  const Chart& chart = model.chart();
  if (!model.in_domain(coords)) throw DomainError("point outside the Legendre domain");
  const LagrangianModel* lag = model.lagrangian();
  auto v = model.velocity(coords);
  Eigen::MatrixXd z = tangent_matrix(chart, v);
  std::vector<double> point(coords.begin(), coords.begin() + chart.dim());
  auto partial = [&](int mu) {
    return richardson(
        [&](double t) {
          auto p = point;
          p[static_cast<std::size_t>(mu)] = t;
          return model.value(p);
        },
        point[static_cast<std::size_t>(mu)]);
  };
  DHReport report;
  Eigen::MatrixXd sub(chart.n(), chart.n());
  for (const auto& m : chart.momenta()) {
    for (int r = 0; r < chart.n(); ++r) sub.row(r) = z.row(m.slots[static_cast<std::size_t>(r)]);
    double expected = sub.determinant();
    double got = partial(m.symbol);
    if (m.degree() == 0)
      report.eps_residual = std::abs(got - 1.0);
    report.momentum_residual = std::max(report.momentum_residual, std::abs(got - expected));
  }
  if (lag) {
    auto dl = lag->lagrangian_q_gradient(point, v);
    for (int mu = 0; mu < chart.n() + chart.k(); ++mu)
      report.position_residual =
          std::max(report.position_residual, std::abs(partial(mu) + dl[static_cast<std::size_t>(mu)]));
  }
  return report;
}

Eigen::MatrixXd hamiltonian_tensor(const HamiltonianModel& model, std::span<const double> coords) {
  const Chart& chart = model.chart();
  const int n = chart.n();
  if (!model.in_domain(coords)) throw DomainError("point outside the Legendre domain");
  auto v = model.velocity(coords);
  Eigen::MatrixXd z = tangent_matrix(chart, v);
  double h = model.value(coords);
  Eigen::MatrixXd out(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      Eigen::MatrixXd zb = z;
      zb.col(a).setZero();
      zb(b, a) = 1.0;
      out(a, b) = (a == b ? h : 0.0) - pairing_value(chart, coords, zb);
    }
  return out;
}

Eigen::MatrixXd stress_energy_tensor(const LagrangianModel& model, std::span<const double> q,
                                     std::span<const double> v) {
  const int n = model.chart().n(), k = model.chart().k();
  double l = model.lagrangian_value(q, v);
  auto dl = model.lagrangian_v_gradient(q, v);
  Eigen::MatrixXd s(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      double value = a == b ? l : 0.0;
      for (int i = 0; i < k; ++i)
        value -= dl[static_cast<std::size_t>(i * n + a)] * v[static_cast<std::size_t>(i * n + b)];
      s(a, b) = value;
    }
  return s;
}

LegendreConditionReport check_legendre_condition(const LagrangianModel& model,
                                                 const std::vector<std::vector<double>>& samples,
                                                 double max_condition) {
  LegendreConditionReport report;
  int good = 0;
  for (const auto& coords : samples) {
    LegendrePointVerdict verdict;
    try {
      InvertOptions opts;
      opts.max_condition = max_condition;
      auto inv = legendre_invert(model, coords, opts);
      auto h = model.w_hessian_value(model.pack(coords, inv.velocity));
      verdict.condition = condition_number(h);
      verdict.invertible = verdict.condition <= max_condition;
    } catch (const SingularHessian& e) {
      verdict.condition = e.condition();
      verdict.invertible = false;
    } catch (const NoConvergence&) {
      verdict.condition = std::numeric_limits<double>::infinity();
      verdict.invertible = false;
    }
    good += verdict.invertible;
    report.points.push_back(verdict);
  }
  report.fraction_in_domain = samples.empty() ? 0.0 : static_cast<double>(good) / static_cast<double>(samples.size());
  return report;
}

}  // namespace pataplectic
