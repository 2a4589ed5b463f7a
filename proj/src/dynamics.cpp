#include "pataplectic/dynamics.hpp"

#include <algorithm>
#include <bit>
#include <functional>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "pataplectic/expr_tools.hpp"
#include "pataplectic/forms.hpp"
#include "pataplectic/parallel.hpp"

namespace pataplectic {

namespace {

constexpr std::size_t kParallelThreshold = 4096;

void for_nodes(std::size_t count, const std::function<void(std::size_t)>& body) {
  if (count >= kParallelThreshold) {
    parallel_for(count, body);
    return;
  }
  for (std::size_t i = 0; i < count; ++i) body(i);
}

std::vector<int> spatial_axes(const LatticeSpec& lattice) {
  std::vector<int> out;
  for (int a = 0; a < lattice.n(); ++a)
    if (a != lattice.time_axis) out.push_back(a);
  return out;
}

bool periodic(const LatticeSpec& lattice, int axis) {
  return axis != lattice.time_axis && lattice.axes[static_cast<std::size_t>(axis)].boundary == Boundary::Periodic;
}

/// Neighbour tables for one time slice.
struct SliceGrid {
  const LatticeSpec& lattice;
  std::vector<int> axes;  // spatial axes
  std::size_t count = 1;
  std::vector<std::vector<long>> next;  // [pos][s] neighbour at +1 or -1
  std::vector<std::vector<long>> prev;
  std::vector<char> boundary;           // fixed-end node
  std::vector<std::vector<int>> index;  // [s] multi-index over spatial axes

  explicit SliceGrid(const LatticeSpec& l) : lattice(l), axes(spatial_axes(l)) {
    count = l.slice_count();
    next.assign(axes.size(), std::vector<long>(count, -1));
    prev.assign(axes.size(), std::vector<long>(count, -1));
    boundary.assign(count, 0);
    index.resize(count);
    for (std::size_t s = 0; s < count; ++s) {
      std::vector<int> multi = l.multi_index(s);  // time index 0
      index[s] = multi;
      for (std::size_t p = 0; p < axes.size(); ++p) {
        int a = axes[p];
        int nodes = l.axes[static_cast<std::size_t>(a)].nodes;
        bool per = periodic(l, a);
        int i = multi[static_cast<std::size_t>(a)];
        auto shifted = [&](int j) -> long {
          if (per) j = (j + nodes) % nodes;
          if (j < 0 || j >= nodes) return -1;
          auto m = multi;
          m[static_cast<std::size_t>(a)] = j;
          return static_cast<long>(l.flat_index(m));
        };
        next[p][s] = shifted(i + 1);
        prev[p][s] = shifted(i - 1);
        if (!per && (i == 0 || i == nodes - 1)) boundary[s] = 1;
      }
    }
  }
  double spacing(std::size_t p) const { return lattice.axes[static_cast<std::size_t>(axes[p])].spacing; }
};

void check_finite(const std::vector<double>& values, double threshold, std::size_t stride, std::size_t offset,
                  const std::string& where) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = values[i];
    if (!std::isfinite(v) || std::abs(v) > threshold) {
      std::size_t node = offset + i / stride;
      std::ostringstream os;
      os << "solution exceeded " << threshold << " at node " << node << " (" << where << ")";
      throw BlowUp(os.str(), node);
    }
  }
}

struct CompiledForm {
  std::vector<std::pair<Index, CompiledExpr>> terms;
  int degree = 0;
  explicit CompiledForm(const DifferentialForm& f) : degree(f.degree()) {
    for (const auto& [idx, c] : f.terms()) terms.emplace_back(idx, CompiledExpr(c));
  }
};

double det_small(const Eigen::MatrixXd& m) {
  if (m.rows() == 0) return 1.0;
  if (m.rows() == 1) return m(0, 0);
  if (m.rows() == 2) return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  return m.determinant();
}

std::vector<Index> subsets(int n, int size) {
  std::vector<Index> out;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != size) continue;
    Index idx;
    for (int a = 0; a < n; ++a)
      if (mask & (1u << a)) idx.push_back(a);
    out.push_back(idx);
  }
  return out;
}

std::vector<double> symbol_values(const Chart& chart, std::span<const double> coords) {
  std::vector<double> values(static_cast<std::size_t>(chart.symbol_count()), 0.0);
  std::copy(coords.begin(), coords.begin() + chart.dim(), values.begin());
  return values;
}

std::map<Index, double> pull_back_compiled(const CompiledForm& form, std::span<const double> values,
                                           const Eigen::MatrixXd& jac, int n) {
  std::map<Index, double> out;
  for (const Index& a : subsets(n, form.degree)) out[a] = 0.0;
  const int d = form.degree;
  for (const auto& [idx, c] : form.terms) {
    double coeff = c(values);
    if (coeff == 0.0) continue;
    for (auto& [a, value] : out) {
      Eigen::MatrixXd sub(d, d);
      for (int r = 0; r < d; ++r)
        for (int col = 0; col < d; ++col) sub(r, col) = jac(idx[static_cast<std::size_t>(r)], a[static_cast<std::size_t>(col)]);
      value += coeff * det_small(sub);
    }
  }
  return out;
}

Index all_but(int n, int skip) {
  Index out;
  for (int a = 0; a < n; ++a)
    if (a != skip) out.push_back(a);
  return out;
}

Index full_index(int n) { return all_but(n, -1); }

/// Nodes at least `margin` steps from every non-periodic end.
bool interior(const LatticeSpec& lattice, const std::vector<int>& multi, int margin) {
  for (int a = 0; a < lattice.n(); ++a) {
    if (periodic(lattice, a)) continue;
    int i = multi[static_cast<std::size_t>(a)];
    if (i < margin || i > lattice.axes[static_cast<std::size_t>(a)].nodes - 1 - margin) return false;
  }
  return true;
}

long shift_node(const LatticeSpec& lattice, std::vector<int> multi, int axis, int delta) {
  int nodes = lattice.axes[static_cast<std::size_t>(axis)].nodes;
  int j = multi[static_cast<std::size_t>(axis)] + delta;
  if (periodic(lattice, axis)) j = ((j % nodes) + nodes) % nodes;
  if (j < 0 || j >= nodes) return -1;
  multi[static_cast<std::size_t>(axis)] = j;
  return static_cast<long>(lattice.flat_index(multi));
}

/// Centred derivative along an axis of a nodal quantity, one-sided of second
/// order at non-periodic ends.
template <class F>
double nodal_derivative(const LatticeSpec& lattice, std::size_t node, int axis, const F& value) {
  auto multi = lattice.multi_index(node);
  double h = lattice.axes[static_cast<std::size_t>(axis)].spacing;
  long plus = shift_node(lattice, multi, axis, 1), minus = shift_node(lattice, multi, axis, -1);
  if (plus >= 0 && minus >= 0) return (value(static_cast<std::size_t>(plus)) - value(static_cast<std::size_t>(minus))) / (2 * h);
  if (plus >= 0) {
    long plus2 = shift_node(lattice, multi, axis, 2);
    return (-3 * value(node) + 4 * value(static_cast<std::size_t>(plus)) - value(static_cast<std::size_t>(plus2))) / (2 * h);
  }
  long minus2 = shift_node(lattice, multi, axis, -2);
  return (3 * value(node) - 4 * value(static_cast<std::size_t>(minus)) + value(static_cast<std::size_t>(minus2))) / (2 * h);
}

void require_lattice(const DynamicsModel& model, const LatticeSpec& lattice) {
  lattice.validate();
  if (lattice.n() != model.chart.n()) throw std::invalid_argument("lattice dimension differs from the base dimension");
}

void require_trajectory(const DynamicsModel& model, const LatticeTrajectory& traj) {
  if (traj.dim != model.chart.dim()) throw std::invalid_argument("trajectory does not match the model chart");
  if (traj.data.size() != traj.lattice.node_count() * static_cast<std::size_t>(traj.dim))
    throw std::invalid_argument("trajectory size does not match its lattice");
}

/// Evaluates y(x) and dy/dt(x) on the first slice, plus spatial derivatives
/// of the initial fields, as velocity rows v[i*n + a].
struct SliceInit {
  std::vector<double> y;  // s*k + i
  std::vector<double> v;  // s*n*k + i*n + a
};

SliceInit evaluate_init(const Chart& chart, const LatticeSpec& lattice, const InitialData& init) {
  const int n = chart.n(), k = chart.k();
  if (static_cast<int>(init.fields.size()) != k || static_cast<int>(init.velocities.size()) != k)
    throw std::invalid_argument("initial data needs one field and one velocity expression per field");
  const int t = lattice.time_axis;
  std::vector<CompiledExpr> fc, vc;
  std::vector<std::vector<CompiledExpr>> dc(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    for (int sym : init.fields[static_cast<std::size_t>(i)].symbols())
      if (!chart.is_base(sym)) throw std::invalid_argument("initial data may depend on base coordinates only");
    for (int sym : init.velocities[static_cast<std::size_t>(i)].symbols())
      if (!chart.is_base(sym)) throw std::invalid_argument("initial data may depend on base coordinates only");
    fc.emplace_back(init.fields[static_cast<std::size_t>(i)]);
    vc.emplace_back(init.velocities[static_cast<std::size_t>(i)]);
    for (int a = 0; a < n; ++a) dc[static_cast<std::size_t>(i)].emplace_back(init.fields[static_cast<std::size_t>(i)].diff(chart.x(a)));
  }
  const std::size_t count = lattice.slice_count();
  SliceInit out;
  out.y.resize(count * static_cast<std::size_t>(k));
  out.v.resize(count * static_cast<std::size_t>(n * k));
  std::vector<double> values(static_cast<std::size_t>(chart.symbol_count()), 0.0);
  for (std::size_t s = 0; s < count; ++s) {
    auto x = lattice.position(s);
    std::copy(x.begin(), x.end(), values.begin());
    for (int i = 0; i < k; ++i) {
      out.y[s * k + i] = fc[static_cast<std::size_t>(i)](values);
      for (int a = 0; a < n; ++a)
        out.v[s * n * k + i * n + a] = a == t ? vc[static_cast<std::size_t>(i)](values) : dc[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)](values);
    }
  }
  return out;
}

std::vector<double> node_x(const LatticeSpec& lattice, double time, std::size_t s) {
  auto x = lattice.position(s);
  x[static_cast<std::size_t>(lattice.time_axis)] = time;
  return x;
}

double eps_from_gauge(const HamiltonianModel& h, std::vector<double>& coords, int eps_symbol) {
  coords[static_cast<std::size_t>(eps_symbol)] = 0.0;
  return -h.value(coords);
}

// ---------------------------------------------------------------------------
// Scalar leapfrog.

LatticeTrajectory solve_scalar(const DynamicsModel& model, const LatticeSpec& lattice, const InitialData& init,
                               const SolveOptions& opts) {
  const ScalarFieldModel& sm = *model.scalar;
  const Chart& chart = model.chart;
  const int n = chart.n(), k = chart.k();
  const int t = lattice.time_axis;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      if (a != b && !is_zero_value(sm.metric(a, b)))
        throw std::invalid_argument("the scalar leapfrog needs a diagonal base metric");
  const Expr h_expr = model.hamiltonian.expression();
  std::vector<CompiledExpr> dh_dy;
  for (int i = 0; i < k; ++i) {
    Expr d = h_expr.diff(chart.y(i));
    for (const auto& m : chart.momenta())
      if (d.depends_on(m.symbol)) throw std::invalid_argument("dH/dy must not depend on momenta for the leapfrog");
    dh_dy.emplace_back(d);
  }
  CompiledExpr weight(chart.volume_weight());
  CompiledExpr g_tt(sm.metric(t, t));
  std::vector<CompiledExpr> ginv;
  for (int a = 0; a < n; ++a) ginv.emplace_back(sm.inverse_metric(a, a));

  SliceGrid grid(lattice);
  const std::size_t S = grid.count;
  const int T = lattice.axes[static_cast<std::size_t>(t)].nodes;
  const double ht = lattice.axes[static_cast<std::size_t>(t)].spacing;
  const double t0 = lattice.axes[static_cast<std::size_t>(t)].origin;
  SliceInit in = evaluate_init(chart, lattice, init);

  auto values_at = [&](const std::vector<double>& x) {
    std::vector<double> v(static_cast<std::size_t>(chart.symbol_count()), 0.0);
    std::copy(x.begin(), x.end(), v.begin());
    return v;
  };

  // Flux g g^{aa} D_a y on half nodes, for each spatial axis position p and node s (s to next).
  auto fluxes = [&](const std::vector<double>& y, double time) {
    std::vector<double> f(grid.axes.size() * S * k, 0.0);
    for_nodes(S, [&](std::size_t s) {
      for (std::size_t p = 0; p < grid.axes.size(); ++p) {
        long nb = grid.next[p][s];
        if (nb < 0) continue;
        int a = grid.axes[p];
        double h = grid.spacing(p);
        auto x = node_x(lattice, time, s);
        x[static_cast<std::size_t>(a)] += 0.5 * h;
        auto vals = values_at(x);
        double coef = weight(vals) * ginv[static_cast<std::size_t>(a)](vals);
        for (int i = 0; i < k; ++i)
          f[(p * S + s) * k + i] = coef * (y[static_cast<std::size_t>(nb) * k + i] - y[s * k + i]) / h;
      }
    });
    return f;
  };
  auto force = [&](const std::vector<double>& y, double time, const std::vector<double>& f) {
    std::vector<double> out(S * k, 0.0);
    for_nodes(S, [&](std::size_t s) {
      if (grid.boundary[s]) return;
      auto vals = values_at(node_x(lattice, time, s));
      for (int i = 0; i < k; ++i) vals[static_cast<std::size_t>(chart.y(i))] = y[s * k + i];
      double gw = weight(vals);
      for (int i = 0; i < k; ++i) {
        double div = 0;
        for (std::size_t p = 0; p < grid.axes.size(); ++p) {
          long pv = grid.prev[p][s];
          div += (f[(p * S + s) * k + i] - f[(p * S + static_cast<std::size_t>(pv)) * k + i]) / grid.spacing(p);
        }
        out[s * k + i] = -div - gw * dh_dy[static_cast<std::size_t>(i)](vals);
      }
    });
    return out;
  };

  // Time momentum density g p^t at t0 from the Legendre map of the initial velocities.
  std::vector<double> pi0(S * k);
  for (std::size_t s = 0; s < S; ++s) {
    auto x = node_x(lattice, t0, s);
    std::vector<double> q(x);
    for (int i = 0; i < k; ++i) q.push_back(in.y[s * k + i]);
    std::vector<double> v(in.v.begin() + static_cast<long>(s * n * k), in.v.begin() + static_cast<long>((s + 1) * n * k));
    auto coords = legendre_forward(model.lagrangian, q, v, 0.0);
    double gw = weight(values_at(x));
    for (int i = 0; i < k; ++i) pi0[s * k + i] = gw * coords[static_cast<std::size_t>(*chart.momentum_symbol({t}, {i}))];
  }

  // Run one step beyond the last level so every stored level has both half-step momenta.
  std::vector<std::vector<double>> y_levels(static_cast<std::size_t>(T + 1));
  std::vector<std::vector<double>> pi_half(static_cast<std::size_t>(T + 1));  // pi_half[n] = Pi^{n+1/2}
  std::vector<std::vector<double>> flux_levels(static_cast<std::size_t>(T));
  y_levels[0] = in.y;
  for (int lvl = 0; lvl <= T - 1; ++lvl) {
    double time = t0 + lvl * ht;
    auto f = fluxes(y_levels[static_cast<std::size_t>(lvl)], time);
    auto r = force(y_levels[static_cast<std::size_t>(lvl)], time, f);
    flux_levels[static_cast<std::size_t>(lvl)] = f;
    std::vector<double> next_pi(S * k);
    const auto& prev_pi = lvl == 0 ? pi0 : pi_half[static_cast<std::size_t>(lvl - 1)];
    double factor = lvl == 0 ? 0.5 * ht : ht;
    for (std::size_t j = 0; j < S * k; ++j) next_pi[j] = prev_pi[j] + factor * r[j];
    pi_half[static_cast<std::size_t>(lvl)] = next_pi;
    std::vector<double> y_next(S * k);
    for_nodes(S, [&](std::size_t s) {
      auto vals = values_at(node_x(lattice, time + 0.5 * ht, s));
      double scale = g_tt(vals) / weight(vals);
      for (int i = 0; i < k; ++i) {
        std::size_t j = s * k + i;
        y_next[j] = grid.boundary[s] ? y_levels[static_cast<std::size_t>(lvl)][j]
                                     : y_levels[static_cast<std::size_t>(lvl)][j] + ht * scale * next_pi[j];
      }
    });
    check_finite(y_next, opts.blow_up, static_cast<std::size_t>(k), static_cast<std::size_t>(lvl + 1) * S, "field");
    check_finite(next_pi, opts.blow_up, static_cast<std::size_t>(k), static_cast<std::size_t>(lvl) * S, "momentum");
    y_levels[static_cast<std::size_t>(lvl + 1)] = std::move(y_next);
  }

  LatticeTrajectory traj;
  traj.lattice = lattice;
  traj.dim = chart.dim();
  traj.scheme = "dw-leapfrog";
  traj.data.assign(lattice.node_count() * static_cast<std::size_t>(traj.dim), 0.0);
  for (int lvl = 0; lvl < T; ++lvl) {
    double time = t0 + lvl * ht;
    const auto& y = y_levels[static_cast<std::size_t>(lvl)];
    const auto& f = flux_levels[static_cast<std::size_t>(lvl)];
    for_nodes(S, [&](std::size_t s) {
      std::size_t node = static_cast<std::size_t>(lvl) * S + s;
      double* out = traj.data.data() + node * static_cast<std::size_t>(traj.dim);
      auto x = node_x(lattice, time, s);
      std::vector<double> coords(static_cast<std::size_t>(chart.dim()), 0.0);
      std::copy(x.begin(), x.end(), coords.begin());
      for (int i = 0; i < k; ++i) coords[static_cast<std::size_t>(chart.y(i))] = y[s * k + i];
      auto vals = values_at(x);
      double gw = weight(vals);
      for (int i = 0; i < k; ++i) {
        double pit = lvl == 0 ? pi0[s * k + i]
                              : 0.5 * (pi_half[static_cast<std::size_t>(lvl - 1)][s * k + i] +
                                       pi_half[static_cast<std::size_t>(lvl)][s * k + i]);
        coords[static_cast<std::size_t>(*chart.momentum_symbol({t}, {i}))] = pit / gw;
        for (std::size_t p = 0; p < grid.axes.size(); ++p) {
          int a = grid.axes[p];
          long nb = grid.next[p][s], pv = grid.prev[p][s];
          double pa;
          if (nb >= 0 && pv >= 0) {
            pa = 0.5 * (f[(p * S + s) * k + i] + f[(p * S + static_cast<std::size_t>(pv)) * k + i]) / gw;
          } else {
            double h = grid.spacing(p);
            double d = nb >= 0 ? (-3 * y[s * k + i] + 4 * y[static_cast<std::size_t>(nb) * k + i] -
                                  y[static_cast<std::size_t>(grid.next[p][static_cast<std::size_t>(nb)]) * k + i]) / (2 * h)
                               : (3 * y[s * k + i] - 4 * y[static_cast<std::size_t>(pv) * k + i] +
                                  y[static_cast<std::size_t>(grid.prev[p][static_cast<std::size_t>(pv)]) * k + i]) / (2 * h);
            pa = ginv[static_cast<std::size_t>(a)](vals) * d;
          }
          coords[static_cast<std::size_t>(*chart.momentum_symbol({a}, {i}))] = pa;
        }
      }
      coords[static_cast<std::size_t>(chart.eps())] = eps_from_gauge(model.hamiltonian, coords, chart.eps());
      std::copy(coords.begin(), coords.end(), out);
    });
  }
  return traj;
}

// ---------------------------------------------------------------------------
// String staggered scheme.

struct StringTensors {
  int k = 0;
  int m = 0;
  CompiledExpr weight;
  std::vector<CompiledExpr> G;                // m*m
  std::vector<std::vector<CompiledExpr>> dG;  // [l][m*m]
  std::vector<CompiledExpr> b;                // k*k

  explicit StringTensors(const StringModel& sm) : k(sm.chart.k()), m(2 * sm.chart.k()), weight(sm.weight) {
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) G.emplace_back(sm.G(r, c));
    dG.resize(static_cast<std::size_t>(k));
    for (int l = 0; l < k; ++l)
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) dG[static_cast<std::size_t>(l)].emplace_back(sm.G(r, c).diff(sm.chart.y(l)));
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) b.emplace_back(sm.b_form(i, j));
  }
  Eigen::MatrixXd matrix(const std::vector<CompiledExpr>& entries, std::span<const double> values) const {
    Eigen::MatrixXd out(m, m);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) out(r, c) = entries[static_cast<std::size_t>(r * m + c)](values);
    return out;
  }
};

LatticeTrajectory solve_string(const DynamicsModel& model, const LatticeSpec& lattice, const InitialData& init,
                               const SolveOptions& opts) {
  const StringModel& sm = *model.string;
  const Chart& chart = model.chart;
  const int k = chart.k(), m = 2 * k;
  const int t = lattice.time_axis, sp = 1 - t;
  StringTensors st(sm);
  SliceGrid grid(lattice);
  const std::size_t S = grid.count;
  const int T = lattice.axes[static_cast<std::size_t>(t)].nodes;
  const double ht = lattice.axes[static_cast<std::size_t>(t)].spacing;
  const double hs = lattice.axes[static_cast<std::size_t>(sp)].spacing;
  const double t0 = lattice.axes[static_cast<std::size_t>(t)].origin;
  SliceInit in = evaluate_init(chart, lattice, init);

  auto values_at = [&](const std::vector<double>& x, std::span<const double> y) {
    std::vector<double> v(static_cast<std::size_t>(chart.symbol_count()), 0.0);
    std::copy(x.begin(), x.end(), v.begin());
    for (int i = 0; i < k; ++i) v[static_cast<std::size_t>(chart.y(i))] = y[static_cast<std::size_t>(i)];
    return v;
  };
  auto field = [&](const std::vector<double>& y, std::size_t s) { return std::span<const double>(y.data() + s * k, k); };

  // Initial-data hyperbolicity: M off the singular locus and G^{tt} invertible.
  for (std::size_t s = 0; s < S; ++s) {
    auto x = node_x(lattice, t0, s);
    auto vals = values_at(x, field(in.y, s));
    std::vector<double> coords(vals.begin(), vals.begin() + chart.dim());
    sm.project_to_R(coords);
    double cond = condition_number(sm.M_value(coords));
    Eigen::MatrixXd G = st.matrix(st.G, vals);
    Eigen::MatrixXd gtt(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) gtt(i, j) = G(i * 2 + t, j * 2 + t);
    if (!(cond <= 1e12) || !(condition_number(gtt) <= 1e12)) {
      std::ostringstream os;
      os << "M or G^tt is singular on the initial slice at node " << s;
      throw NonHyperbolicInit(os.str());
    }
  }

  auto velocity_vec = [&](std::span<const double> vt, std::span<const double> vs) {
    Eigen::VectorXd v(m);
    for (int i = 0; i < k; ++i) {
      v(i * 2 + t) = vt[static_cast<std::size_t>(i)];
      v(i * 2 + sp) = vs[static_cast<std::size_t>(i)];
    }
    return v;
  };
  auto centred = [&](const std::vector<double>& y, std::size_t s, std::vector<double>& out) {
    long nb = grid.next[0][s], pv = grid.prev[0][s];
    for (int i = 0; i < k; ++i) {
      if (nb >= 0 && pv >= 0) {
        out[static_cast<std::size_t>(i)] = (y[static_cast<std::size_t>(nb) * k + i] - y[static_cast<std::size_t>(pv) * k + i]) / (2 * hs);
      } else if (nb >= 0) {
        long nb2 = grid.next[0][static_cast<std::size_t>(nb)];
        out[static_cast<std::size_t>(i)] = (-3 * y[s * k + i] + 4 * y[static_cast<std::size_t>(nb) * k + i] - y[static_cast<std::size_t>(nb2) * k + i]) / (2 * hs);
      } else {
        long pv2 = grid.prev[0][static_cast<std::size_t>(pv)];
        out[static_cast<std::size_t>(i)] = (3 * y[s * k + i] - 4 * y[static_cast<std::size_t>(pv) * k + i] + y[static_cast<std::size_t>(pv2) * k + i]) / (2 * hs);
      }
    }
  };

  // Momentum balance at time level `time`: -D_s F^s + g/2 v dG v, with vt the
  // nodal time derivatives.
  auto balance = [&](const std::vector<double>& y, const std::vector<double>& vt, double time) {
    std::vector<double> flux(S * k, 0.0);
    for_nodes(S, [&](std::size_t s) {
      long nb = grid.next[0][s];
      if (nb < 0) return;
      std::vector<double> ym(k), vtm(k), vs(k);
      for (int i = 0; i < k; ++i) {
        ym[static_cast<std::size_t>(i)] = 0.5 * (y[s * k + i] + y[static_cast<std::size_t>(nb) * k + i]);
        vtm[static_cast<std::size_t>(i)] = 0.5 * (vt[s * k + i] + vt[static_cast<std::size_t>(nb) * k + i]);
        vs[static_cast<std::size_t>(i)] = (y[static_cast<std::size_t>(nb) * k + i] - y[s * k + i]) / hs;
      }
      auto x = node_x(lattice, time, s);
      x[static_cast<std::size_t>(sp)] += 0.5 * hs;
      auto vals = values_at(x, ym);
      Eigen::VectorXd gv = st.matrix(st.G, vals) * velocity_vec(vtm, vs);
      double gw = st.weight(vals);
      for (int i = 0; i < k; ++i) flux[s * k + i] = gw * gv(i * 2 + sp);
    });
    std::vector<double> out(S * k, 0.0);
    for_nodes(S, [&](std::size_t s) {
      if (grid.boundary[s]) return;
      long pv = grid.prev[0][s];
      std::vector<double> vs(k);
      centred(y, s, vs);
      auto vals = values_at(node_x(lattice, time, s), field(y, s));
      Eigen::VectorXd v = velocity_vec(field(vt, s), vs);
      double gw = st.weight(vals);
      for (int i = 0; i < k; ++i) {
        double src = 0.5 * gw * v.dot(st.matrix(st.dG[static_cast<std::size_t>(i)], vals) * v);
        out[s * k + i] = -(flux[s * k + i] - flux[static_cast<std::size_t>(pv) * k + i]) / hs + src;
      }
    });
    return out;
  };

  // Time momentum density g (G v)^t at a point.
  auto density = [&](const std::vector<double>& x, std::span<const double> ybar, std::span<const double> vt,
                     std::span<const double> vs) {
    auto vals = values_at(x, ybar);
    Eigen::VectorXd gv = st.matrix(st.G, vals) * velocity_vec(vt, vs);
    Eigen::VectorXd out(k);
    double gw = st.weight(vals);
    for (int i = 0; i < k; ++i) out(i) = gw * gv(i * 2 + t);
    return out;
  };

  // Solves Pi^{n+1/2} = density(mid-level) for the next level, Newton per node
  // with neighbouring new values frozen, swept to a fixed point.
  auto advance = [&](const std::vector<double>& y, const std::vector<double>& pi, std::vector<double> guess,
                     double time) {
    for (int sweep = 0; sweep < opts.fixed_point_iterations; ++sweep) {
      std::vector<double> next(S * k);
      for_nodes(S, [&](std::size_t s) {
        if (grid.boundary[s]) {
          for (int i = 0; i < k; ++i) next[s * k + i] = y[s * k + i];
          return;
        }
        long nb = grid.next[0][s], pv = grid.prev[0][s];
        std::vector<double> vs(k);
        for (int i = 0; i < k; ++i) {
          double up = 0.5 * (y[static_cast<std::size_t>(nb) * k + i] + guess[static_cast<std::size_t>(nb) * k + i]);
          double dn = 0.5 * (y[static_cast<std::size_t>(pv) * k + i] + guess[static_cast<std::size_t>(pv) * k + i]);
          vs[static_cast<std::size_t>(i)] = (up - dn) / (2 * hs);
        }
        auto x = node_x(lattice, time + 0.5 * ht, s);
        Eigen::VectorXd target(k);
        for (int i = 0; i < k; ++i) target(i) = pi[s * k + i];
        auto residual = [&](const Eigen::VectorXd& z) {
          std::vector<double> ybar(k), vt(k);
          for (int i = 0; i < k; ++i) {
            ybar[static_cast<std::size_t>(i)] = 0.5 * (y[s * k + i] + z(i));
            vt[static_cast<std::size_t>(i)] = (z(i) - y[s * k + i]) / ht;
          }
          return Eigen::VectorXd(density(x, ybar, vt, vs) - target);
        };
        Eigen::VectorXd z(k);
        for (int i = 0; i < k; ++i) z(i) = guess[s * k + i];
        double scale = 1.0 + target.cwiseAbs().maxCoeff();
        for (int it = 0; it < 40; ++it) {
          Eigen::VectorXd r = residual(z);
          if (r.cwiseAbs().maxCoeff() <= 1e-15 * scale) break;
          Eigen::MatrixXd jac(k, k);
          for (int j = 0; j < k; ++j) {
            double d = 1e-6 * std::max(1.0, std::abs(z(j)));
            Eigen::VectorXd zp = z, zm = z;
            zp(j) += d;
            zm(j) -= d;
            jac.col(j) = (residual(zp) - residual(zm)) / (2 * d);
          }
          Eigen::VectorXd step = jac.partialPivLu().solve(r);
          z -= step;
          if (step.cwiseAbs().maxCoeff() <= 1e-16 * (1.0 + z.cwiseAbs().maxCoeff())) break;
        }
        for (int i = 0; i < k; ++i) next[s * k + i] = z(i);
      });
      double change = 0, size = 0;
      for (std::size_t j = 0; j < next.size(); ++j) {
        change = std::max(change, std::abs(next[j] - guess[j]));
        size = std::max(size, std::abs(next[j]));
      }
      guess = std::move(next);
      if (change <= opts.fixed_point_tolerance * (1.0 + size)) return guess;
    }
    throw NoConvergence("string step did not reach a fixed point");
  };

  std::vector<std::vector<double>> y_levels(static_cast<std::size_t>(T + 2));
  std::vector<std::vector<double>> pi_half(static_cast<std::size_t>(T + 1));
  y_levels[0] = in.y;
  std::vector<double> vt0(S * k);
  for (std::size_t s = 0; s < S; ++s)
    for (int i = 0; i < k; ++i) vt0[s * k + i] = in.v[s * 2 * k + i * 2 + t];
  std::vector<double> pi0(S * k);
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<double> vs(k);
    for (int i = 0; i < k; ++i) vs[static_cast<std::size_t>(i)] = in.v[s * 2 * k + i * 2 + sp];
    Eigen::VectorXd d = density(node_x(lattice, t0, s), field(in.y, s), field(vt0, s), vs);
    for (int i = 0; i < k; ++i) pi0[s * k + i] = d(i);
  }
  {
    auto r = balance(in.y, vt0, t0);
    std::vector<double> pi(S * k);
    for (std::size_t j = 0; j < S * k; ++j) pi[j] = pi0[j] + 0.5 * ht * r[j];
    std::vector<double> guess(S * k);
    for (std::size_t j = 0; j < S * k; ++j) guess[j] = in.y[j] + ht * vt0[j];
    y_levels[1] = advance(in.y, pi, guess, t0);
    pi_half[0] = pi;
  }
  for (int lvl = 1; lvl <= T; ++lvl) {
    double time = t0 + lvl * ht;
    const auto& y = y_levels[static_cast<std::size_t>(lvl)];
    const auto& yp = y_levels[static_cast<std::size_t>(lvl - 1)];
    std::vector<double> guess(S * k);
    for (std::size_t j = 0; j < S * k; ++j) guess[j] = 2 * y[j] - yp[j];
    std::vector<double> pi;
    for (int sweep = 0;; ++sweep) {
      std::vector<double> vt(S * k);
      for (std::size_t j = 0; j < S * k; ++j) vt[j] = (guess[j] - yp[j]) / (2 * ht);
      auto r = balance(y, vt, time);
      pi.assign(S * k, 0.0);
      for (std::size_t j = 0; j < S * k; ++j) pi[j] = pi_half[static_cast<std::size_t>(lvl - 1)][j] + ht * r[j];
      auto next = advance(y, pi, guess, time);
      double change = 0, size = 0;
      for (std::size_t j = 0; j < next.size(); ++j) {
        change = std::max(change, std::abs(next[j] - guess[j]));
        size = std::max(size, std::abs(next[j]));
      }
      guess = std::move(next);
      if (change <= opts.fixed_point_tolerance * (1.0 + size)) break;
      if (sweep + 1 >= opts.fixed_point_iterations) throw NoConvergence("string step did not reach a fixed point");
    }
    check_finite(guess, opts.blow_up, static_cast<std::size_t>(k), static_cast<std::size_t>(lvl + 1) * S, "field");
    pi_half[static_cast<std::size_t>(lvl)] = pi;
    y_levels[static_cast<std::size_t>(lvl + 1)] = std::move(guess);
  }

  LatticeTrajectory traj;
  traj.lattice = lattice;
  traj.dim = chart.dim();
  traj.scheme = "dw-staggered-newton";
  traj.data.assign(lattice.node_count() * static_cast<std::size_t>(traj.dim), 0.0);
  for (int lvl = 0; lvl < T; ++lvl) {
    double time = t0 + lvl * ht;
    const auto& y = y_levels[static_cast<std::size_t>(lvl)];
    for_nodes(S, [&](std::size_t s) {
      std::size_t node = static_cast<std::size_t>(lvl) * S + s;
      std::vector<double> vt(k), vs(k);
      for (int i = 0; i < k; ++i)
        vt[static_cast<std::size_t>(i)] =
            lvl == 0 ? vt0[s * k + i]
                     : (y_levels[static_cast<std::size_t>(lvl + 1)][s * k + i] - y_levels[static_cast<std::size_t>(lvl - 1)][s * k + i]) / (2 * ht);
      centred(y, s, vs);
      auto x = node_x(lattice, time, s);
      auto vals = values_at(x, field(y, s));
      std::vector<double> coords(vals.begin(), vals.begin() + chart.dim());
      sm.project_to_R(coords);
      double gw = st.weight(vals);
      Eigen::VectorXd v = velocity_vec(vt, vs);
      Eigen::VectorXd gv = st.matrix(st.G, vals) * v;
      // p = M v with M = G - p_ij eps^{ab} on R; the time row uses the stored density.
      for (int i = 0; i < k; ++i) {
        double pt = lvl == 0 ? pi0[s * k + i]
                             : 0.5 * (pi_half[static_cast<std::size_t>(lvl - 1)][s * k + i] + pi_half[static_cast<std::size_t>(lvl)][s * k + i]);
        double rot_t = 0, rot_s = 0;
        for (int j = 0; j < k; ++j) {
          double pij = st.b[static_cast<std::size_t>(i * k + j)](vals) / gw;
          double eps_ts = t < sp ? 1.0 : -1.0;
          rot_t += pij * eps_ts * vs[static_cast<std::size_t>(j)];
          rot_s += pij * (-eps_ts) * vt[static_cast<std::size_t>(j)];
        }
        coords[static_cast<std::size_t>(*chart.momentum_symbol({t}, {i}))] = pt / gw - rot_t;
        coords[static_cast<std::size_t>(*chart.momentum_symbol({sp}, {i}))] = gv(i * 2 + sp) - rot_s;
      }
      coords[static_cast<std::size_t>(chart.eps())] = eps_from_gauge(model.hamiltonian, coords, chart.eps());
      std::copy(coords.begin(), coords.end(), traj.data.begin() + static_cast<long>(node * static_cast<std::size_t>(traj.dim)));
    });
  }
  return traj;
}

}  // namespace

// ---------------------------------------------------------------------------
// Lattice.

std::size_t LatticeSpec::node_count() const {
  std::size_t out = 1;
  for (const auto& a : axes) out *= static_cast<std::size_t>(a.nodes);
  return out;
}

std::size_t LatticeSpec::slice_count() const {
  std::size_t out = 1;
  for (int a = 0; a < n(); ++a)
    if (a != time_axis) out *= static_cast<std::size_t>(axes[static_cast<std::size_t>(a)].nodes);
  return out;
}

void LatticeSpec::validate() const {
  if (axes.empty()) throw std::invalid_argument("lattice.axes: at least one axis is required");
  if (time_axis < 0 || time_axis >= n()) throw std::invalid_argument("lattice.time_axis: out of range");
  for (int a = 0; a < n(); ++a) {
    const auto& ax = axes[static_cast<std::size_t>(a)];
    std::string where = "lattice.axes[" + std::to_string(a) + "]";
    if (ax.nodes < 4) throw std::invalid_argument(where + ".nodes: at least 4 nodes are required");
    if (!(ax.spacing > 0) || !std::isfinite(ax.spacing)) throw std::invalid_argument(where + ".spacing: must be positive");
    if (!std::isfinite(ax.origin)) throw std::invalid_argument(where + ".origin: must be finite");
  }
}

LatticeSpec LatticeSpec::refined() const {
  LatticeSpec out = *this;
  for (int a = 0; a < n(); ++a) {
    auto& ax = out.axes[static_cast<std::size_t>(a)];
    ax.spacing *= 0.5;
    ax.nodes = (a != time_axis && ax.boundary == Boundary::Periodic) ? 2 * ax.nodes : 2 * (ax.nodes - 1) + 1;
  }
  return out;
}

std::vector<int> LatticeSpec::multi_index(std::size_t node) const {
  std::vector<int> out(axes.size(), 0);
  std::size_t s = node % slice_count();
  out[static_cast<std::size_t>(time_axis)] = static_cast<int>(node / slice_count());
  for (int a = n() - 1; a >= 0; --a) {
    if (a == time_axis) continue;
    auto nodes = static_cast<std::size_t>(axes[static_cast<std::size_t>(a)].nodes);
    out[static_cast<std::size_t>(a)] = static_cast<int>(s % nodes);
    s /= nodes;
  }
  return out;
}

std::size_t LatticeSpec::flat_index(const std::vector<int>& idx) const {
  std::size_t s = 0;
  for (int a = 0; a < n(); ++a) {
    if (a == time_axis) continue;
    s = s * static_cast<std::size_t>(axes[static_cast<std::size_t>(a)].nodes) + static_cast<std::size_t>(idx[static_cast<std::size_t>(a)]);
  }
  return static_cast<std::size_t>(idx[static_cast<std::size_t>(time_axis)]) * slice_count() + s;
}

std::vector<double> LatticeSpec::position(std::size_t node) const {
  auto idx = multi_index(node);
  std::vector<double> x(axes.size());
  for (std::size_t a = 0; a < axes.size(); ++a) x[a] = axes[a].origin + idx[a] * axes[a].spacing;
  return x;
}

// ---------------------------------------------------------------------------
// Models.

DynamicsModel DynamicsModel::from(const ScalarFieldModel& m) {
  return DynamicsModel{Kind::Scalar, m.chart, m.lagrangian, m.hamiltonian, m, std::nullopt};
}

DynamicsModel DynamicsModel::from(const StringModel& m) {
  return DynamicsModel{Kind::String, m.chart, m.lagrangian, m.hamiltonian, std::nullopt, m};
}

DynamicsModel DynamicsModel::from(const LagrangianModel& l, const BuildOptions& opts) {
  return DynamicsModel{Kind::Lagrangian, l.chart(), l, build_hamiltonian(l, opts), std::nullopt, std::nullopt};
}

Expr DynamicsModel::hamiltonian_expression() const {
  if (hamiltonian.has_expression()) return hamiltonian.expression();
  if (!string) throw std::domain_error("no closed form for H is available for this model");
  auto k_matrix = string->M.inverse();
  if (!k_matrix) throw std::domain_error("M has no symbolic inverse");
  const int k = chart.k();
  Expr h = Expr::symbol(chart.eps());
  for (int r = 0; r < 2 * k; ++r)
    for (int c = 0; c < 2 * k; ++c) {
      if ((*k_matrix)(r, c).is_zero()) continue;
      Expr pr = Expr::symbol(*chart.momentum_symbol({r % 2}, {r / 2}));
      Expr pc = Expr::symbol(*chart.momentum_symbol({c % 2}, {c / 2}));
      h += Expr(Rational(1, 2)) * (*k_matrix)(r, c) * pr * pc;
    }
  return h;
}

// ---------------------------------------------------------------------------
// Solvers.

LatticeTrajectory solve_dw(const DynamicsModel& model, const LatticeSpec& lattice, const InitialData& init,
                           const SolveOptions& opts) {
  require_lattice(model, lattice);
  switch (model.kind) {
    case DynamicsModel::Kind::Scalar:
      return solve_scalar(model, lattice, init, opts);
    case DynamicsModel::Kind::String:
      return solve_string(model, lattice, init, opts);
    case DynamicsModel::Kind::Lagrangian:
      break;
  }
  throw std::invalid_argument("solve_dw supports scalar and string models; use solve_el for general Lagrangians");
}

LatticeTrajectory solve_el(const DynamicsModel& model, const LatticeSpec& lattice, const InitialData& init,
                           const SolveOptions& opts) {
  require_lattice(model, lattice);
  const LagrangianModel& lm = model.lagrangian;
  const Chart& chart = model.chart;
  const int n = chart.n(), k = chart.k();
  const int t = lattice.time_axis;
  const Expr& l = lm.lagrangian();
  std::vector<CompiledExpr> dl_dv, dl_dy, hess_tt;
  for (int i = 0; i < k; ++i)
    for (int a = 0; a < n; ++a) dl_dv.emplace_back(l.diff(chart.velocity(i, a)));
  for (int i = 0; i < k; ++i) dl_dy.emplace_back(l.diff(chart.y(i)));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) hess_tt.emplace_back(l.diff(chart.velocity(i, t)).diff(chart.velocity(j, t)));
  CompiledExpr weight(chart.volume_weight());

  SliceGrid grid(lattice);
  const std::size_t S = grid.count;
  const std::size_t P = grid.axes.size();
  const int T = lattice.axes[static_cast<std::size_t>(t)].nodes;
  const double ht = lattice.axes[static_cast<std::size_t>(t)].spacing;
  const double t0 = lattice.axes[static_cast<std::size_t>(t)].origin;
  SliceInit in = evaluate_init(chart, lattice, init);
  const std::size_t nk = static_cast<std::size_t>(n * k);

  auto load = [&](std::vector<double>& vals, const std::vector<double>& x, std::span<const double> y,
                  std::span<const double> v) {
    std::fill(vals.begin(), vals.end(), 0.0);
    std::copy(x.begin(), x.end(), vals.begin());
    for (int i = 0; i < k; ++i) vals[static_cast<std::size_t>(chart.y(i))] = y[static_cast<std::size_t>(i)];
    for (int i = 0; i < k; ++i)
      for (int a = 0; a < n; ++a) vals[static_cast<std::size_t>(chart.velocity(i, a))] = v[static_cast<std::size_t>(i * n + a)];
  };

  // Spatial velocities by centred differences (one-sided at fixed ends).
  auto spatial_velocity = [&](const std::vector<double>& y, std::vector<double>& v) {
    for_nodes(S, [&](std::size_t s) {
      for (std::size_t p = 0; p < P; ++p) {
        int a = grid.axes[p];
        double h = grid.spacing(p);
        long nb = grid.next[p][s], pv = grid.prev[p][s];
        for (int i = 0; i < k; ++i) {
          double d;
          if (nb >= 0 && pv >= 0) {
            d = (y[static_cast<std::size_t>(nb) * k + i] - y[static_cast<std::size_t>(pv) * k + i]) / (2 * h);
          } else if (nb >= 0) {
            long nb2 = grid.next[p][static_cast<std::size_t>(nb)];
            d = (-3 * y[s * k + i] + 4 * y[static_cast<std::size_t>(nb) * k + i] - y[static_cast<std::size_t>(nb2) * k + i]) / (2 * h);
          } else {
            long pv2 = grid.prev[p][static_cast<std::size_t>(pv)];
            d = (3 * y[s * k + i] - 4 * y[static_cast<std::size_t>(pv) * k + i] + y[static_cast<std::size_t>(pv2) * k + i]) / (2 * h);
          }
          v[s * nk + static_cast<std::size_t>(i * n + a)] = d;
        }
      }
    });
  };

  // Recovers v_t from u = g dL/dv_t by Newton at every node; v holds the
  // spatial velocities on entry and the previous v_t as the initial guess.
  auto recover_vt = [&](const std::vector<double>& y, const std::vector<double>& u, std::vector<double>& v,
                        double time) {
    for_nodes(S, [&](std::size_t s) {
      std::vector<double> vals(static_cast<std::size_t>(chart.symbol_count()));
      auto x = node_x(lattice, time, s);
      std::span<double> vs(v.data() + s * nk, nk);
      for (int it = 0; it < 50; ++it) {
        load(vals, x, std::span<const double>(y.data() + s * k, k), vs);
        double gw = weight(vals);
        Eigen::VectorXd r(k);
        Eigen::MatrixXd jac(k, k);
        for (int i = 0; i < k; ++i) {
          r(i) = gw * dl_dv[static_cast<std::size_t>(i * n + t)](vals) - u[s * k + i];
          for (int j = 0; j < k; ++j) jac(i, j) = gw * hess_tt[static_cast<std::size_t>(i * k + j)](vals);
        }
        Eigen::VectorXd step = jac.partialPivLu().solve(r);
        if (!step.allFinite()) throw SingularHessian("dL/dv_t cannot be inverted for v_t");
        for (int i = 0; i < k; ++i) vs[static_cast<std::size_t>(i * n + t)] -= step(i);
        if (step.cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + r.cwiseAbs().maxCoeff()) || r.cwiseAbs().maxCoeff() == 0) break;
      }
    });
  };

  auto rhs = [&](const std::vector<double>& y, const std::vector<double>& u, std::vector<double>& v, double time,
                 std::vector<double>& dy, std::vector<double>& du) {
    spatial_velocity(y, v);
    recover_vt(y, u, v, time);
    std::vector<double> flux(P * S * k, 0.0);
    for_nodes(S, [&](std::size_t s) {
      std::vector<double> vals(static_cast<std::size_t>(chart.symbol_count()));
      for (std::size_t p = 0; p < P; ++p) {
        long nb = grid.next[p][s];
        if (nb < 0) continue;
        int a = grid.axes[p];
        double h = grid.spacing(p);
        std::vector<double> ym(k), vm(nk);
        for (int i = 0; i < k; ++i) ym[static_cast<std::size_t>(i)] = 0.5 * (y[s * k + i] + y[static_cast<std::size_t>(nb) * k + i]);
        for (std::size_t c = 0; c < nk; ++c) vm[c] = 0.5 * (v[s * nk + c] + v[static_cast<std::size_t>(nb) * nk + c]);
        for (int i = 0; i < k; ++i)
          vm[static_cast<std::size_t>(i * n + a)] = (y[static_cast<std::size_t>(nb) * k + i] - y[s * k + i]) / h;
        auto x = node_x(lattice, time, s);
        x[static_cast<std::size_t>(a)] += 0.5 * h;
        load(vals, x, ym, vm);
        double gw = weight(vals);
        for (int i = 0; i < k; ++i) flux[(p * S + s) * k + i] = gw * dl_dv[static_cast<std::size_t>(i * n + a)](vals);
      }
    });
    for_nodes(S, [&](std::size_t s) {
      if (grid.boundary[s]) {
        for (int i = 0; i < k; ++i) dy[s * k + i] = du[s * k + i] = 0.0;
        return;
      }
      std::vector<double> vals(static_cast<std::size_t>(chart.symbol_count()));
      load(vals, node_x(lattice, time, s), std::span<const double>(y.data() + s * k, k),
           std::span<const double>(v.data() + s * nk, nk));
      double gw = weight(vals);
      for (int i = 0; i < k; ++i) {
        double div = 0;
        for (std::size_t p = 0; p < P; ++p) {
          long pv = grid.prev[p][s];
          div += (flux[(p * S + s) * k + i] - flux[(p * S + static_cast<std::size_t>(pv)) * k + i]) / grid.spacing(p);
        }
        dy[s * k + i] = v[s * nk + static_cast<std::size_t>(i * n + t)];
        du[s * k + i] = -div + gw * dl_dy[static_cast<std::size_t>(i)](vals);
      }
    });
  };

  std::vector<double> y = in.y, v = in.v, u(S * k);
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<double> vals(static_cast<std::size_t>(chart.symbol_count()));
    load(vals, node_x(lattice, t0, s), std::span<const double>(y.data() + s * k, k),
         std::span<const double>(v.data() + s * nk, nk));
    double gw = weight(vals);
    for (int i = 0; i < k; ++i) u[s * k + i] = gw * dl_dv[static_cast<std::size_t>(i * n + t)](vals);
  }

  LatticeTrajectory traj;
  traj.lattice = lattice;
  traj.dim = chart.dim();
  traj.scheme = "el-rk4";
  traj.data.assign(lattice.node_count() * static_cast<std::size_t>(traj.dim), 0.0);
  auto emit = [&](int lvl, std::vector<double>& vcur) {
    double time = t0 + lvl * ht;
    spatial_velocity(y, vcur);
    recover_vt(y, u, vcur, time);
    for_nodes(S, [&](std::size_t s) {
      auto x = node_x(lattice, time, s);
      std::vector<double> q(x);
      for (int i = 0; i < k; ++i) q.push_back(y[s * k + i]);
      std::map<int, double> higher;
      if (model.string) higher = model.string->R_momenta(q);
      auto coords = legendre_forward(lm, q, std::span<const double>(vcur.data() + s * nk, nk), 0.0, higher);
      std::copy(coords.begin(), coords.end(),
                traj.data.begin() + static_cast<long>((static_cast<std::size_t>(lvl) * S + s) * static_cast<std::size_t>(traj.dim)));
    });
  };

  std::vector<double> k1y(S * k), k1u(S * k), k2y(S * k), k2u(S * k), k3y(S * k), k3u(S * k), k4y(S * k), k4u(S * k);
  std::vector<double> ys(S * k), us(S * k);
  emit(0, v);
  for (int lvl = 0; lvl + 1 < T; ++lvl) {
    double time = t0 + lvl * ht;
    rhs(y, u, v, time, k1y, k1u);
    for (std::size_t j = 0; j < S * k; ++j) ys[j] = y[j] + 0.5 * ht * k1y[j], us[j] = u[j] + 0.5 * ht * k1u[j];
    rhs(ys, us, v, time + 0.5 * ht, k2y, k2u);
    for (std::size_t j = 0; j < S * k; ++j) ys[j] = y[j] + 0.5 * ht * k2y[j], us[j] = u[j] + 0.5 * ht * k2u[j];
    rhs(ys, us, v, time + 0.5 * ht, k3y, k3u);
    for (std::size_t j = 0; j < S * k; ++j) ys[j] = y[j] + ht * k3y[j], us[j] = u[j] + ht * k3u[j];
    rhs(ys, us, v, time + ht, k4y, k4u);
    for (std::size_t j = 0; j < S * k; ++j) {
      y[j] += ht / 6 * (k1y[j] + 2 * k2y[j] + 2 * k3y[j] + k4y[j]);
      u[j] += ht / 6 * (k1u[j] + 2 * k2u[j] + 2 * k3u[j] + k4u[j]);
    }
    check_finite(y, opts.blow_up, static_cast<std::size_t>(k), static_cast<std::size_t>(lvl + 1) * S, "field");
    check_finite(u, opts.blow_up, static_cast<std::size_t>(k), static_cast<std::size_t>(lvl + 1) * S, "momentum");
    emit(lvl + 1, v);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Trajectory utilities.

std::vector<double> slice_fields(const LatticeTrajectory& traj, int time_index, int k, int field_offset) {
  const std::size_t S = traj.lattice.slice_count();
  std::vector<double> out(S * static_cast<std::size_t>(k));
  for (std::size_t s = 0; s < S; ++s)
    for (int i = 0; i < k; ++i) out[s * k + i] = traj.at(static_cast<std::size_t>(time_index) * S + s, field_offset + i);
  return out;
}

double field_discrepancy(const LatticeTrajectory& a, const LatticeTrajectory& b, const Chart& chart) {
  if (a.data.size() != b.data.size()) throw std::invalid_argument("trajectories live on different lattices");
  double out = 0;
  for (std::size_t node = 0; node < a.lattice.node_count(); ++node)
    for (int i = 0; i < chart.k(); ++i) out = std::max(out, std::abs(a.at(node, chart.y(i)) - b.at(node, chart.y(i))));
  return out;
}

double field_error(const LatticeTrajectory& traj, const Chart& chart, const std::vector<Expr>& exact) {
  std::vector<CompiledExpr> ec;
  for (const auto& e : exact) ec.emplace_back(e);
  double out = 0;
  std::vector<double> vals(static_cast<std::size_t>(chart.symbol_count()), 0.0);
  for (std::size_t node = 0; node < traj.lattice.node_count(); ++node) {
    auto x = traj.lattice.position(node);
    std::copy(x.begin(), x.end(), vals.begin());
    for (int i = 0; i < chart.k(); ++i)
      out = std::max(out, std::abs(traj.at(node, chart.y(i)) - ec[static_cast<std::size_t>(i)](vals)));
  }
  return out;
}

Eigen::MatrixXd node_jacobian(const LatticeTrajectory& traj, std::size_t node) {
  const int n = traj.lattice.n();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(traj.dim, n);
  for (int a = 0; a < n; ++a) jac(a, a) = 1.0;
  for (int mu = n; mu < traj.dim; ++mu)
    for (int a = 0; a < n; ++a)
      jac(mu, a) = nodal_derivative(traj.lattice, node, a, [&](std::size_t j) { return traj.at(j, mu); });
  return jac;
}

std::map<Index, double> pull_back(const Chart& chart, const DifferentialForm& form, const LatticeTrajectory& traj,
                                  std::size_t node) {
  CompiledForm cf(form);
  auto values = symbol_values(chart, traj.node(node));
  return pull_back_compiled(cf, values, node_jacobian(traj, node), chart.n());
}

// ---------------------------------------------------------------------------
// Checks.

namespace {

/// -g sum_mu dH/dq^mu (Xi^mu - sum_a Xi^a J^mu_a), the top component of
/// {H omega, a} pulled back to the graph.
struct BracketEvaluator {
  const DynamicsModel& model;
  std::vector<CompiledExpr> xi;  // per chart coordinate
  CompiledExpr weight;

  BracketEvaluator(const DynamicsModel& m, const ObservableForm& a) : model(m), weight(m.chart.volume_weight()) {
    VectorField field = xi_of(m.chart, a).field;
    for (int mu = 0; mu < m.chart.dim(); ++mu) xi.emplace_back(field.coeff({mu}));
  }
  double operator()(std::span<const double> coords, const Eigen::MatrixXd& jac) const {
    const Chart& chart = model.chart;
    auto values = symbol_values(chart, coords);
    auto grad = model.hamiltonian.gradient(coords);
    std::vector<double> x(static_cast<std::size_t>(chart.dim()));
    for (int mu = 0; mu < chart.dim(); ++mu) x[static_cast<std::size_t>(mu)] = xi[static_cast<std::size_t>(mu)](values);
    double sum = 0;
    for (int mu = 0; mu < chart.dim(); ++mu) {
      double transverse = x[static_cast<std::size_t>(mu)];
      for (int a = 0; a < chart.n(); ++a) transverse -= x[static_cast<std::size_t>(a)] * jac(mu, a);
      sum += grad[static_cast<std::size_t>(mu)] * transverse;
    }
    return -weight(values) * sum;
  }
};

std::vector<double> axis_weights(const LatticeSpec& lattice, int axis, int lo, int hi) {
  const auto& ax = lattice.axes[static_cast<std::size_t>(axis)];
  std::vector<double> w;
  bool whole = lo == 0 && hi == ax.nodes - 1;
  for (int i = lo; i <= hi; ++i) {
    if (whole && periodic(lattice, axis)) w.push_back(ax.spacing);
    else w.push_back((i == lo || i == hi) ? 0.5 * ax.spacing : ax.spacing);
  }
  return w;
}

/// Calls body(node, weight) over the box [lo, hi] restricted to `axes`, with
/// `fixed` giving the index of the remaining axes.
void box_sum(const LatticeSpec& lattice, const std::vector<int>& lo, const std::vector<int>& hi,
             const std::function<void(std::size_t, double)>& body) {
  const int n = lattice.n();
  std::vector<std::vector<double>> w(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) w[static_cast<std::size_t>(a)] = axis_weights(lattice, a, lo[static_cast<std::size_t>(a)], hi[static_cast<std::size_t>(a)]);
  std::vector<int> idx(lo);
  while (true) {
    double weight = 1;
    for (int a = 0; a < n; ++a)
      if (lo[static_cast<std::size_t>(a)] != hi[static_cast<std::size_t>(a)])
        weight *= w[static_cast<std::size_t>(a)][static_cast<std::size_t>(idx[static_cast<std::size_t>(a)] - lo[static_cast<std::size_t>(a)])];
    body(lattice.flat_index(idx), weight);
    int a = n - 1;
    while (a >= 0) {
      if (++idx[static_cast<std::size_t>(a)] <= hi[static_cast<std::size_t>(a)]) break;
      idx[static_cast<std::size_t>(a)] = lo[static_cast<std::size_t>(a)];
      --a;
    }
    if (a < 0) break;
  }
}

std::vector<int> full_lo(const LatticeSpec& l) { return std::vector<int>(l.axes.size(), 0); }
std::vector<int> full_hi(const LatticeSpec& l) {
  std::vector<int> out;
  for (const auto& a : l.axes) out.push_back(a.nodes - 1);
  return out;
}

/// Nodes of the lattice at least `margin` away from non-periodic ends.
std::vector<std::size_t> interior_nodes(const LatticeSpec& lattice, int margin) {
  std::vector<std::size_t> out;
  for (std::size_t node = 0; node < lattice.node_count(); ++node)
    if (interior(lattice, lattice.multi_index(node), margin)) out.push_back(node);
  return out;
}

/// Maximum of per-node values computed in parallel, reduced in node order.
ResidualReport max_over(const std::string& name, const std::vector<std::size_t>& nodes,
                        const std::function<double(std::size_t)>& value) {
  std::vector<double> r(nodes.size());
  for_nodes(nodes.size(), [&](std::size_t i) { r[i] = value(nodes[i]); });
  ResidualReport out;
  out.name = name;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!(r[i] <= out.max_residual)) {
      out.max_residual = r[i];
      out.worst_node = nodes[i];
    }
  }
  return out;
}

double slice_orientation(int time_axis) { return time_axis % 2 == 0 ? 1.0 : -1.0; }

}  // namespace

ResidualReport verify_hamiltonian_flow(const DynamicsModel& model, const LatticeTrajectory& traj, const ObservableForm& a) {
  require_trajectory(model, traj);
  const Chart& chart = model.chart;
  if (a.degree(chart) != chart.n() - 1) throw NotPataplectic("the flow check needs an (n-1)-form");
  BracketEvaluator bracket(model, a);
  CompiledForm da(exterior_derivative(a.expand(chart)));
  Index top = full_index(chart.n());
  return max_over("hamiltonian_flow", interior_nodes(traj.lattice, 1), [&](std::size_t node) {
    auto jac = node_jacobian(traj, node);
    auto values = symbol_values(chart, traj.node(node));
    double lhs = pull_back_compiled(da, values, jac, chart.n())[top];
    return std::abs(lhs - bracket(traj.node(node), jac));
  });
}

StokesReport stokes_check(const DynamicsModel& model, const LatticeTrajectory& traj, const ObservableForm& a,
                          const std::vector<int>& lo, const std::vector<int>& hi) {
  require_trajectory(model, traj);
  const Chart& chart = model.chart;
  const int n = chart.n();
  if (static_cast<int>(lo.size()) != n || static_cast<int>(hi.size()) != n)
    throw std::invalid_argument("patch corners need one index per axis");
  for (int ax = 0; ax < n; ++ax)
    if (lo[static_cast<std::size_t>(ax)] < 0 || hi[static_cast<std::size_t>(ax)] >= traj.lattice.axes[static_cast<std::size_t>(ax)].nodes ||
        lo[static_cast<std::size_t>(ax)] >= hi[static_cast<std::size_t>(ax)])
      throw std::invalid_argument("patch corners out of range");
  BracketEvaluator bracket(model, a);
  CompiledForm form(a.expand(chart));
  StokesReport out;
  box_sum(traj.lattice, lo, hi, [&](std::size_t node, double w) {
    out.bulk += w * bracket(traj.node(node), node_jacobian(traj, node));
  });
  for (int ax = 0; ax < n; ++ax) {
    Index face = all_but(n, ax);
    double sign = ax % 2 == 0 ? 1.0 : -1.0;
    for (int side = 0; side < 2; ++side) {
      std::vector<int> flo(lo), fhi(hi);
      int at = side == 0 ? lo[static_cast<std::size_t>(ax)] : hi[static_cast<std::size_t>(ax)];
      flo[static_cast<std::size_t>(ax)] = fhi[static_cast<std::size_t>(ax)] = at;
      double orient = side == 0 ? -sign : sign;
      box_sum(traj.lattice, flo, fhi, [&](std::size_t node, double w) {
        auto values = symbol_values(chart, traj.node(node));
        out.boundary += orient * w * pull_back_compiled(form, values, node_jacobian(traj, node), n)[face];
      });
    }
  }
  out.difference = std::abs(out.bulk - out.boundary);
  return out;
}

ResidualReport verify_omega_flow(const DynamicsModel& model, const LatticeTrajectory& traj,
                             const DifferentialForm& lambda) {
  require_trajectory(model, traj);
  const Chart& chart = model.chart;
  DifferentialForm rhs = omega_bracket(chart, model.hamiltonian_expression(), lambda);
  CompiledForm lhs_c(exterior_derivative(lambda));
  CompiledForm rhs_c(rhs);
  return max_over("omega_flow", interior_nodes(traj.lattice, 1), [&](std::size_t node) {
    auto jac = node_jacobian(traj, node);
    auto values = symbol_values(chart, traj.node(node));
    auto l = pull_back_compiled(lhs_c, values, jac, chart.n());
    auto r = pull_back_compiled(rhs_c, values, jac, chart.n());
    double worst = 0;
    for (const auto& [idx, v] : l) worst = std::max(worst, std::abs(v - r[idx]));
    return worst;
  });
}

Eigen::MatrixXd stress_energy_at(const DynamicsModel& model, const LatticeTrajectory& traj, std::size_t node) {
  const Chart& chart = model.chart;
  const int n = chart.n(), k = chart.k();
  auto jac = node_jacobian(traj, node);
  auto c = traj.node(node);
  std::vector<double> q(c.begin(), c.begin() + n + k);
  std::vector<double> v(static_cast<std::size_t>(n * k));
  for (int i = 0; i < k; ++i)
    for (int a = 0; a < n; ++a) v[static_cast<std::size_t>(i * n + a)] = jac(chart.y(i), a);
  return stress_energy_tensor(model.lagrangian, q, v);
}

ResidualReport stress_energy(const DynamicsModel& model, const LatticeTrajectory& traj) {
  require_trajectory(model, traj);
  const Chart& chart = model.chart;
  const int n = chart.n(), k = chart.k();
  const std::size_t N = traj.lattice.node_count();
  CompiledExpr weight(chart.volume_weight());
  std::vector<CompiledExpr> dweight;
  for (int a = 0; a < n; ++a) dweight.emplace_back(chart.volume_weight().diff(chart.x(a)));
  // g S^a_b at every node.
  std::vector<Eigen::MatrixXd> gs(N);
  for_nodes(N, [&](std::size_t node) {
    auto values = symbol_values(chart, traj.node(node));
    gs[node] = weight(values) * stress_energy_at(model, traj, node);
  });
  return max_over("stress", interior_nodes(traj.lattice, 2), [&](std::size_t node) {
    auto jac = node_jacobian(traj, node);
    auto c = traj.node(node);
    auto values = symbol_values(chart, c);
    std::vector<double> q(c.begin(), c.begin() + n + k);
    std::vector<double> v(static_cast<std::size_t>(n * k));
    for (int i = 0; i < k; ++i)
      for (int a = 0; a < n; ++a) v[static_cast<std::size_t>(i * n + a)] = jac(chart.y(i), a);
    double l = model.lagrangian.lagrangian_value(q, v);
    auto dl = model.lagrangian.lagrangian_q_gradient(q, v);
    double gw = weight(values);
    double worst = 0;
    for (int b = 0; b < n; ++b) {
      double div = 0;
      for (int a = 0; a < n; ++a)
        div += nodal_derivative(traj.lattice, node, a, [&](std::size_t j) { return gs[j](a, b); });
      double explicit_part = gw * dl[static_cast<std::size_t>(b)] + l * dweight[static_cast<std::size_t>(b)](values);
      worst = std::max(worst, std::abs(div - explicit_part));
    }
    return worst;
  });
}

double slice_integral(const DynamicsModel& model, const LatticeTrajectory& traj, const DifferentialForm& a, int t) {
  require_trajectory(model, traj);
  const Chart& chart = model.chart;
  const int n = chart.n();
  const int ta = traj.lattice.time_axis;
  if (a.degree() != n - 1) throw std::invalid_argument("slice integrals need an (n-1)-form");
  if (t < 0 || t >= traj.lattice.axes[static_cast<std::size_t>(ta)].nodes) throw std::invalid_argument("time index out of range");
  CompiledForm form(a);
  Index face = all_but(n, ta);
  std::vector<int> lo = full_lo(traj.lattice), hi = full_hi(traj.lattice);
  lo[static_cast<std::size_t>(ta)] = hi[static_cast<std::size_t>(ta)] = t;
  std::vector<std::size_t> nodes;
  std::vector<double> weights;
  box_sum(traj.lattice, lo, hi, [&](std::size_t node, double w) {
    nodes.push_back(node);
    weights.push_back(w);
  });
  std::vector<double> contrib(nodes.size());
  for_nodes(nodes.size(), [&](std::size_t i) {
    auto values = symbol_values(chart, traj.node(nodes[i]));
    contrib[i] = weights[i] * pull_back_compiled(form, values, node_jacobian(traj, nodes[i]), n)[face];
  });
  double sum = 0;
  for (double c : contrib) sum += c;
  return slice_orientation(ta) * sum;
}

double slice_integral(const DynamicsModel& model, const LatticeTrajectory& traj, const ObservableForm& a, int t) {
  return slice_integral(model, traj, a.expand(model.chart), t);
}

SliceBracketReport slice_bracket_check(const DynamicsModel& model, const LatticeTrajectory& traj,
                                       const std::vector<Expr>& f, const Expr& g, int t, int field) {
  require_trajectory(model, traj);
  const Chart& chart = model.chart;
  const int ta = traj.lattice.time_axis;
  if (chart.n() != 2) throw std::invalid_argument("the canonical slice comparison needs one space axis");
  if (ta < 0 || ta >= chart.n()) throw std::invalid_argument("invalid time axis designation");
  auto P = ObservableForm::momentum(chart.y(field), g);
  auto Q = ObservableForm::position(field, f);
  SliceBracketReport out;
  out.bracket_integral = slice_integral(model, traj, pbracket_internal(chart, P, Q), t);
  std::vector<Expr> f2(f);
  for (auto& e : f2) e = e * Expr(2) + Expr::symbol(chart.x(ta));
  out.qq_integral = slice_integral(model, traj, pbracket_internal(chart, Q, ObservableForm::position(field, f2)), t);
  CompiledExpr fc(f[static_cast<std::size_t>(ta)]), gc(g), wc(chart.volume_weight());
  std::vector<int> lo = full_lo(traj.lattice), hi = full_hi(traj.lattice);
  lo[static_cast<std::size_t>(ta)] = hi[static_cast<std::size_t>(ta)] = t;
  box_sum(traj.lattice, lo, hi, [&](std::size_t node, double w) {
    auto values = symbol_values(chart, traj.node(node));
    out.expected += w * fc(values) * gc(values) * wc(values);
  });
  out.difference = std::abs(out.bracket_integral - out.expected);
  return out;
}

ResidualReport slice_evolution(const DynamicsModel& model, const LatticeTrajectory& traj, const ObservableForm& a,
                               const ObservableForm& a_t) {
  require_trajectory(model, traj);
  const Chart& chart = model.chart;
  const int ta = traj.lattice.time_axis;
  const int T = traj.lattice.axes[static_cast<std::size_t>(ta)].nodes;
  const double ht = traj.lattice.axes[static_cast<std::size_t>(ta)].spacing;
  auto eta0 = ObservableForm::eta_slice(model.hamiltonian_expression(), ta);
  DifferentialForm bracket = pbracket_external(chart, eta0.expand(chart), a);
  DifferentialForm a_form = a.expand(chart), at_form = a_t.expand(chart);
  std::vector<double> phi(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) phi[static_cast<std::size_t>(t)] = slice_integral(model, traj, a_form, t);
  ResidualReport out;
  out.name = "slice_evolution";
  for (int t = 1; t + 1 < T; ++t) {
    double lhs = (phi[static_cast<std::size_t>(t + 1)] - phi[static_cast<std::size_t>(t - 1)]) / (2 * ht);
    double rhs = slice_integral(model, traj, bracket, t) + slice_integral(model, traj, at_form, t);
    double r = std::abs(lhs - rhs);
    if (r > out.max_residual) {
      out.max_residual = r;
      out.worst_node = static_cast<std::size_t>(t);
    }
  }
  out.extra = phi;
  return out;
}

ResidualReport slice_energy(const DynamicsModel& model, const LatticeTrajectory& traj) {
  require_trajectory(model, traj);
  const int ta = traj.lattice.time_axis;
  const int T = traj.lattice.axes[static_cast<std::size_t>(ta)].nodes;
  DifferentialForm eta0 = ObservableForm::eta_slice(model.hamiltonian_expression(), ta).expand(model.chart);
  ResidualReport out;
  out.name = "slice_energy";
  for (int t = 0; t < T; ++t) out.extra.push_back(slice_integral(model, traj, eta0, t));
  for (int t = 0; t < T; ++t) {
    double d = std::abs(out.extra[static_cast<std::size_t>(t)] - out.extra[0]);
    if (d > out.max_residual) {
      out.max_residual = d;
      out.worst_node = static_cast<std::size_t>(t);
    }
  }
  return out;
}

ActionReport action_consistency(const DynamicsModel& model, const LatticeTrajectory& traj) {
  require_trajectory(model, traj);
  const Chart& chart = model.chart;
  const int n = chart.n(), k = chart.k();
  CompiledForm theta(cartan_form(chart));
  CompiledExpr weight(chart.volume_weight());
  Index top = full_index(n);
  std::vector<std::size_t> nodes;
  std::vector<double> weights;
  box_sum(traj.lattice, full_lo(traj.lattice), full_hi(traj.lattice), [&](std::size_t node, double w) {
    nodes.push_back(node);
    weights.push_back(w);
  });
  std::vector<double> ham(nodes.size()), lag(nodes.size());
  for_nodes(nodes.size(), [&](std::size_t i) {
    std::size_t node = nodes[i];
    auto c = traj.node(node);
    auto values = symbol_values(chart, c);
    auto jac = node_jacobian(traj, node);
    double gw = weight(values);
    ham[i] = weights[i] * (pull_back_compiled(theta, values, jac, n)[top] - model.hamiltonian.value(c) * gw);
    std::vector<double> q(c.begin(), c.begin() + n + k);
    std::vector<double> v(static_cast<std::size_t>(n * k));
    for (int f = 0; f < k; ++f)
      for (int a = 0; a < n; ++a) v[static_cast<std::size_t>(f * n + a)] = jac(chart.y(f), a);
    lag[i] = weights[i] * gw * model.lagrangian.lagrangian_value(q, v);
  });
  ActionReport out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    out.hamiltonian_action += ham[i];
    out.lagrangian_action += lag[i];
  }
  out.difference = std::abs(out.hamiltonian_action - out.lagrangian_action);
  return out;
}

NoetherReport noether_check(const DynamicsModel& model, const LatticeTrajectory& traj, const std::vector<Expr>& xi) {
  require_trajectory(model, traj);
  const Chart& chart = model.chart;
  const int n = chart.n();
  if (static_cast<int>(xi.size()) != n + chart.k()) throw std::invalid_argument("xi needs one component per coordinate of X x Y");
  const Expr h = model.hamiltonian_expression();
  DifferentialForm h_omega = h * base_volume(chart);
  DifferentialForm lagrange_form = cartan_form(chart) - h_omega;
  auto p_xi = ObservableForm::generalized_momentum(xi);
  VectorField big_xi = xi_of(chart, p_xi).field;
  DifferentialForm lie = lie_derivative(big_xi, lagrange_form);
  NoetherReport out;
  out.symmetric = is_zero_form(lie);
  if (!out.symmetric) {
    for (const auto& [idx, c] : lie.terms()) {
      if (is_zero_value(c)) continue;
      std::ostringstream os;
      os << "d";
      for (int mu : idx) os << chart.name(mu);
      os << ": " << chart.print(c);
      out.witness = os.str();
      break;
    }
  }
  VectorField small(chart.dim(), 1);
  for (int mu = 0; mu < n + chart.k(); ++mu) small.add({mu}, xi[static_cast<std::size_t>(mu)]);
  DifferentialForm lhs = pbracket_external(chart, h_omega, p_xi);
  DifferentialForm rhs = lie + exterior_derivative(interior(small, h_omega));
  out.identity_holds = is_zero_form(lhs - rhs);
  if (!out.symmetric) return out;

  // Discrete divergence of the pulled-back current P*_xi = xi ⌟ (theta - H omega).
  CompiledForm current(interior(small, lagrange_form));
  const std::size_t N = traj.lattice.node_count();
  std::vector<std::map<Index, double>> pulled(N);
  for_nodes(N, [&](std::size_t node) {
    auto values = symbol_values(chart, traj.node(node));
    pulled[node] = pull_back_compiled(current, values, node_jacobian(traj, node), n);
  });
  auto r = max_over("noether", interior_nodes(traj.lattice, 2), [&](std::size_t node) {
    double div = 0;
    for (int a = 0; a < n; ++a) {
      Index face = all_but(n, a);
      double sign = a % 2 == 0 ? 1.0 : -1.0;
      div += sign * nodal_derivative(traj.lattice, node, a, [&](std::size_t j) { return pulled[j].at(face); });
    }
    return std::abs(div);
  });
  out.current_residual = r.max_residual;
  out.worst_node = r.worst_node;
  return out;
}

ResidualReport string_el_residual(const StringModel& model, const LatticeTrajectory& traj) {
  const Chart& chart = model.chart;
  if (traj.dim != chart.dim()) throw std::invalid_argument("trajectory does not match the string chart");
  const int k = chart.k(), m = 2 * k;
  StringTensors st(model);
  const std::size_t N = traj.lattice.node_count();
  // g (G v)^a_i at every node.
  std::vector<Eigen::VectorXd> flux(N);
  std::vector<Eigen::VectorXd> source(N);
  for_nodes(N, [&](std::size_t node) {
    auto jac = node_jacobian(traj, node);
    auto values = symbol_values(chart, traj.node(node));
    Eigen::VectorXd v(m);
    for (int i = 0; i < k; ++i)
      for (int a = 0; a < 2; ++a) v(i * 2 + a) = jac(chart.y(i), a);
    double gw = st.weight(values);
    flux[node] = gw * (st.matrix(st.G, values) * v);
    source[node] = Eigen::VectorXd(k);
    for (int i = 0; i < k; ++i)
      source[node](i) = 0.5 * gw * v.dot(st.matrix(st.dG[static_cast<std::size_t>(i)], values) * v);
  });
  return max_over("string_el", interior_nodes(traj.lattice, 2), [&](std::size_t node) {
    auto values = symbol_values(chart, traj.node(node));
    double gw = st.weight(values);
    double worst = 0;
    for (int i = 0; i < k; ++i) {
      double div = 0;
      for (int a = 0; a < 2; ++a)
        div += nodal_derivative(traj.lattice, node, a, [&](std::size_t j) { return flux[j](i * 2 + a); });
      worst = std::max(worst, std::abs(div - source[node](i)) / gw);
    }
    return worst;
  });
}

double convergence_order(const std::vector<double>& errors) {
  if (errors.size() < 2) throw std::invalid_argument("an order estimate needs at least two levels");
  for (double e : errors)
    if (!(e > 0)) return std::numeric_limits<double>::infinity();
  const double count = static_cast<double>(errors.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    double x = static_cast<double>(i), y = std::log2(errors[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return -(count * sxy - sx * sy) / (count * sxx - sx * sx);
}

}  // namespace pataplectic
