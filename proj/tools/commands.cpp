#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "pataplectic/dynamics.hpp"
#include "pataplectic/forms.hpp"
#include "pataplectic/identities.hpp"
#include "pataplectic/legendre.hpp"
#include "pataplectic/model_io.hpp"
#include "pataplectic/observables.hpp"

namespace pataplectic::cli {

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kCheckFailed = 2;

Json header(const std::string& command) { return Json{{"format_version", kFormatVersion}, {"command", command}}; }

void emit(const Json& doc, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << doc.dump(2) << "\n";
    return;
  }
  std::ofstream file(path);
  if (!file) throw SchemaError("report", "cannot write '" + path + "'");
  file << doc.dump(2) << "\n";
}

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(); }

Json chart_document(const std::string& path) {
  Json j = read_json_file(path, "chart");
  check_format_version(j, "chart");
  if (j.is_object() && j.contains("chart")) return j["chart"];
  if (j.is_object()) j.erase("format_version");
  return j;
}

const char* kind_name(DynamicsModel::Kind k) {
  switch (k) {
    case DynamicsModel::Kind::Scalar: return "scalar";
    case DynamicsModel::Kind::String: return "string";
    default: return "lagrangian";
  }
}

// ---------------------------------------------------------------------------
// model show

Json show_model(const DynamicsModel& model) {
  const Chart& c = model.chart;
  Json j = header("model show");
  j["kind"] = kind_name(model.kind);
  j["chart"] = chart_to_json(c);
  j["lagrangian"] = c.print(model.lagrangian.lagrangian());
  try {
    j["hamiltonian"] = c.print(model.hamiltonian_expression());
  } catch (const std::exception& e) {
    j["hamiltonian"] = Json();
    j["hamiltonian_note"] = e.what();
  }
  j["theta"] = form_to_json(cartan_form(c), c);
  j["Omega"] = form_to_json(pataplectic_form(c), c);
  Json forward = Json::object();
  for (const auto& [id, e] : legendre_forward_expressions(model.lagrangian)) forward[c.name(id)] = c.print(e);
  j["legendre_forward"] = forward;
  if (model.hamiltonian.has_velocity_expressions()) {
    Json inverse = Json::object();
    const auto& v = model.hamiltonian.velocity_expressions();
    for (int i = 0; i < c.k(); ++i)
      for (int a = 0; a < c.n(); ++a) inverse[c.name(c.velocity(i, a))] = c.print(v[static_cast<std::size_t>(i * c.n() + a)]);
    j["legendre_inverse"] = inverse;
  }
  return j;
}

// ---------------------------------------------------------------------------
// legendre

std::vector<double> number_list(const Json& j, std::size_t size, const std::string& where) {
  if (!j.is_array() || j.size() != size) throw SchemaError(where, "expected " + std::to_string(size) + " numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < size; ++i) {
    if (!j[i].is_number()) throw SchemaError(where + "[" + std::to_string(i) + "]", "expected a number");
    out.push_back(j[i].get<double>());
  }
  return out;
}

Json named_values(const Chart& c, std::span<const double> coords) {
  Json j = Json::object();
  for (int id = 0; id < c.dim(); ++id) j[c.name(id)] = coords[static_cast<std::size_t>(id)];
  return j;
}

Json legendre_report(const DynamicsModel& model, const Json& point) {
  const Chart& c = model.chart;
  const LagrangianModel& l = model.lagrangian;
  const HamiltonianModel& h = model.hamiltonian;
  if (!point.is_object()) throw SchemaError("point", "expected an object");
  Json j = header("legendre");
  std::vector<double> coords;
  std::vector<double> v;
  double w = 0;
  if (point.contains("coords")) {
    j["direction"] = "inverse";
    const Json& cj = point["coords"];
    if (cj.is_object()) {
      coords.assign(static_cast<std::size_t>(c.dim()), 0.0);
      for (const auto& [name, value] : cj.items()) {
        auto id = c.lookup(name);
        if (!id || *id >= c.dim()) throw SchemaError("point.coords." + name, "unknown coordinate");
        if (!value.is_number()) throw SchemaError("point.coords." + name, "expected a number");
        coords[static_cast<std::size_t>(*id)] = value.get<double>();
      }
    } else {
      coords = number_list(cj, static_cast<std::size_t>(c.dim()), "point.coords");
    }
    InvertResult inv = legendre_invert(l, coords);
    v = inv.velocity;
    w = h.value(coords);
    j["newton_iterations"] = inv.iterations;
    j["condition"] = number_or_null(inv.condition);
  } else {
    j["direction"] = "forward";
    auto q = number_list(point.contains("q") ? point["q"] : Json(), static_cast<std::size_t>(c.n() + c.k()), "point.q");
    v = number_list(point.contains("v") ? point["v"] : Json(), static_cast<std::size_t>(l.velocity_count()), "point.v");
    if (point.contains("w")) {
      if (!point["w"].is_number()) throw SchemaError("point.w", "expected a number");
      w = point["w"].get<double>();
    }
    std::map<int, double> higher;
    if (point.contains("higher")) {
      for (const auto& [name, value] : point["higher"].items()) {
        auto id = c.lookup(name);
        if (!id || !c.is_momentum(*id) || c.momentum_of(*id).degree() < 2)
          throw SchemaError("point.higher." + name, "not a momentum of degree >= 2");
        if (!value.is_number()) throw SchemaError("point.higher." + name, "expected a number");
        higher[*id] = value.get<double>();
      }
    } else if (model.string) {
      higher = model.string->R_momenta(q);
    }
    coords = legendre_forward(l, q, v, w, higher);
  }
  j["coords"] = named_values(c, coords);
  Json vel = Json::object();
  for (int i = 0; i < c.k(); ++i)
    for (int a = 0; a < c.n(); ++a) vel[c.name(c.velocity(i, a))] = v[static_cast<std::size_t>(i * c.n() + a)];
  j["velocity"] = vel;
  j["w"] = w;

  Json res;
  InvertResult back = legendre_invert(l, coords);
  double round_trip = 0;
  for (std::size_t i = 0; i < v.size(); ++i) round_trip = std::max(round_trip, std::abs(back.velocity[i] - v[i]));
  res["round_trip_velocity"] = round_trip;
  res["hamiltonian_minus_w"] = std::abs(h.value(coords) - w);
  DHReport dh = verify_dH(h, coords);
  res["dH_momentum"] = dh.momentum_residual;
  res["dH_position"] = dh.position_residual;
  res["dH_eps"] = dh.eps_residual;
  std::vector<double> q(coords.begin(), coords.begin() + c.n() + c.k());
  Eigen::MatrixXd sum = hamiltonian_tensor(h, coords) + stress_energy_tensor(l, q, v);
  res["tensor_plus_stress"] = sum.cwiseAbs().maxCoeff();
  j["residuals"] = res;
  return j;
}

// ---------------------------------------------------------------------------
// verify-identities

Json identity_report(const Chart& chart, std::uint64_t seed, int instances, bool& all_passed) {
  auto checks = run_identity_suite(chart, seed, instances);
  auto more = run_admissibility_suite(chart, seed, instances);
  checks.insert(checks.end(), more.begin(), more.end());
  std::sort(checks.begin(), checks.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  Json list = Json::array();
  int failed = 0;
  for (const auto& c : checks) {
    Json e{{"name", c.name},
           {"status", c.passed() ? "pass" : "fail"},
           {"instances", c.instances},
           {"failures", c.failures},
           {"max_residual", c.max_residual}};
    if (!c.first_failure.empty()) e["first_failure"] = c.first_failure;
    if (!c.passed()) ++failed;
    list.push_back(e);
  }
  Json j = header("verify-identities");
  j["chart"] = chart_to_json(chart);
  j["seed"] = seed;
  j["instances"] = instances;
  j["checks"] = list;
  j["summary"] = {{"total", checks.size()}, {"failed", failed}, {"status", failed ? "fail" : "pass"}};
  all_passed = failed == 0;
  return j;
}

// ---------------------------------------------------------------------------
// simulate / verify

LatticeTrajectory simulate(const DynamicsModel& model, const LatticeSpec& lattice, const InitialData& init,
                           const std::string& solver) {
  if (solver == "el") return solve_el(model, lattice, init);
  if (solver == "dw") return solve_dw(model, lattice, init);
  throw SchemaError("solver", "expected dw or el, got '" + solver + "'");
}

std::string default_solver(const DynamicsModel& model) {
  return model.kind == DynamicsModel::Kind::Lagrangian ? "el" : "dw";
}

struct Thresholds {
  double min_order = 1.7;
  double floor = 1e-12;
  double slice_tolerance = 1e-10;
};

struct Context {
  DynamicsModel model;
  InitialData init;
  std::vector<LatticeTrajectory> levels;
  Thresholds thresholds;
  std::vector<std::string> observables;
  std::uint64_t seed = 1;
};

Json ladder_item(const std::string& name, const std::vector<double>& residuals, const Thresholds& t) {
  double order = residuals.size() >= 2 ? convergence_order(residuals) : std::numeric_limits<double>::quiet_NaN();
  bool pass = (std::isfinite(order) && order >= t.min_order) || residuals.back() <= t.floor;
  Json r = Json::array();
  for (double v : residuals) r.push_back(v);
  return Json{{"name", name}, {"residuals", r}, {"order", number_or_null(order)}, {"status", pass ? "pass" : "fail"}};
}

bool item_passed(const Json& item) { return item["status"] == "pass"; }

Json finish_check(const std::string& name, Json items) {
  bool pass = std::all_of(items.begin(), items.end(), item_passed);
  return Json{{"name", name}, {"status", pass ? "pass" : "fail"}, {"items", std::move(items)}};
}

std::string ones_then_zeros(int n) {
  std::string s = "1";
  for (int a = 1; a < n; ++a) s += "; 0";
  return s;
}

std::vector<std::string> default_observables(const Chart& c) {
  std::vector<std::string> out;
  for (int i = 0; i < c.k(); ++i) {
    std::string y = c.name(c.y(i));
    out.push_back("P[" + y + "](1)");
    out.push_back("Q[" + y + "](" + ones_then_zeros(c.n()) + ")");
  }
  return out;
}

ObservableForm observable(const Context& ctx, const std::string& text) {
  try {
    return parse_observable(ctx.model.chart, text);
  } catch (const std::invalid_argument&) {
    return parse_observable(ctx.model.chart, text, ctx.model.hamiltonian_expression());
  }
}

// Box [T/4, 3T/4] in time and the first quarter of each spatial axis.
std::pair<std::vector<int>, std::vector<int>> stokes_patch(const LatticeSpec& lat) {
  std::vector<int> lo, hi;
  for (int a = 0; a < lat.n(); ++a) {
    int nodes = lat.axes[static_cast<std::size_t>(a)].nodes;
    if (a == lat.time_axis) {
      lo.push_back((nodes - 1) / 4);
      hi.push_back(3 * (nodes - 1) / 4);
    } else {
      lo.push_back(0);
      hi.push_back(std::max(1, nodes / 4));
    }
  }
  return {lo, hi};
}

Json check_theorem2(const Context& ctx) {
  Json items = Json::array();
  for (const auto& text : ctx.observables) {
    ObservableForm a = observable(ctx, text);
    std::vector<double> r;
    for (const auto& traj : ctx.levels) r.push_back(verify_hamiltonian_flow(ctx.model, traj, a).max_residual);
    Json item = ladder_item(text, r, ctx.thresholds);
    auto [lo, hi] = stokes_patch(ctx.levels.back().lattice);
    StokesReport s = stokes_check(ctx.model, ctx.levels.back(), a, lo, hi);
    item["stokes"] = {{"bulk", s.bulk}, {"boundary", s.boundary}, {"difference", s.difference}};
    items.push_back(item);
  }
  return finish_check("theorem2", items);
}

Json check_lemma4(const Context& ctx) {
  const Chart& c = ctx.model.chart;
  Json items = Json::array();
  for (int i = 0; i < c.k(); ++i) {
    auto lambda = DifferentialForm::scalar(c.dim(), Expr::symbol(c.y(i)));
    std::vector<double> r;
    for (const auto& traj : ctx.levels) r.push_back(verify_omega_flow(ctx.model, traj, lambda).max_residual);
    items.push_back(ladder_item(c.name(c.y(i)), r, ctx.thresholds));
  }
  return finish_check("lemma4", items);
}

Json check_noether(const Context& ctx) {
  const Chart& c = ctx.model.chart;
  Json items = Json::array();
  for (int mu = 0; mu < c.n() + c.k(); ++mu) {
    std::vector<Expr> xi(static_cast<std::size_t>(c.n() + c.k()));
    xi[static_cast<std::size_t>(mu)] = Expr(1);
    std::string name = "d/d" + c.name(mu);
    std::vector<double> r;
    NoetherReport first;
    bool identity = true;
    for (std::size_t l = 0; l < ctx.levels.size(); ++l) {
      NoetherReport rep = noether_check(ctx.model, ctx.levels[l], xi);
      if (l == 0) first = rep;
      identity = identity && rep.identity_holds;
      r.push_back(rep.current_residual);
    }
    Json item;
    if (first.symmetric) {
      item = ladder_item(name, r, ctx.thresholds);
    } else {
      item = Json{{"name", name}, {"status", "pass"}, {"witness", first.witness}};
    }
    item["symmetric"] = first.symmetric;
    item["identity_holds"] = identity;
    if (!identity) item["status"] = "fail";
    items.push_back(item);
  }
  return finish_check("noether", items);
}

Json check_stress(const Context& ctx) {
  std::vector<double> r;
  for (const auto& traj : ctx.levels) r.push_back(stress_energy(ctx.model, traj).max_residual);
  return finish_check("stress", Json::array({ladder_item("divergence", r, ctx.thresholds)}));
}

Json check_action(const Context& ctx) {
  std::vector<double> r;
  Json values = Json::array();
  for (const auto& traj : ctx.levels) {
    ActionReport a = action_consistency(ctx.model, traj);
    r.push_back(std::abs(a.difference));
    values.push_back({{"hamiltonian_action", a.hamiltonian_action}, {"lagrangian_action", a.lagrangian_action}});
  }
  Json item = ladder_item("difference", r, ctx.thresholds);
  item["actions"] = values;
  return finish_check("action", Json::array({item}));
}

Json check_slices(const Context& ctx) {
  const Chart& c = ctx.model.chart;
  const int n = c.n();
  const LatticeTrajectory& finest = ctx.levels.back();
  int t_axis = finest.lattice.time_axis;
  int middle = (finest.lattice.axes[static_cast<std::size_t>(t_axis)].nodes - 1) / 2;
  Expr t = Expr::symbol(c.x(t_axis));
  // A spatial profile keeps the slice integrals away from zero for waves
  // that average out over a period.
  Expr profile(1);
  if (n > 1) profile = Expr(2) + sin(Expr::symbol(c.x(t_axis == 0 ? 1 : 0)));
  Json items = Json::array();
  for (int i = 0; i < c.k(); ++i) {
    std::string y = c.name(c.y(i));
    std::vector<Expr> f(static_cast<std::size_t>(n)), f_t(static_cast<std::size_t>(n));
    f[static_cast<std::size_t>(t_axis)] = (Expr(1) + t) * profile;
    f_t[static_cast<std::size_t>(t_axis)] = profile;

    SliceBracketReport b = slice_bracket_check(ctx.model, finest, f, Expr(1), middle, i);
    bool ok = std::abs(b.difference) <= ctx.thresholds.slice_tolerance &&
              std::abs(b.qq_integral) <= ctx.thresholds.slice_tolerance;
    items.push_back(Json{{"name", "bracket P[" + y + "] Q[" + y + "]"},
                         {"bracket_integral", b.bracket_integral},
                         {"expected", b.expected},
                         {"difference", b.difference},
                         {"qq_integral", b.qq_integral},
                         {"status", ok ? "pass" : "fail"}});

    auto q = ObservableForm::position(i, f);
    auto q_t = ObservableForm::position(i, f_t);
    auto p = ObservableForm::momentum(c.y(i), (Expr(1) + t * t) * profile);
    auto p_t = ObservableForm::momentum(c.y(i), Expr(2) * t * profile);
    std::vector<double> rq, rp;
    for (const auto& traj : ctx.levels) {
      rq.push_back(slice_evolution(ctx.model, traj, q, q_t).max_residual);
      rp.push_back(slice_evolution(ctx.model, traj, p, p_t).max_residual);
    }
    items.push_back(ladder_item("evolution Q[" + y + "]", rq, ctx.thresholds));
    items.push_back(ladder_item("evolution P[" + y + "]", rp, ctx.thresholds));
  }
  if (!ctx.model.lagrangian.lagrangian().depends_on(c.x(t_axis))) {
    std::vector<double> drift;
    for (const auto& traj : ctx.levels) drift.push_back(slice_energy(ctx.model, traj).max_residual);
    items.push_back(ladder_item("energy drift", drift, ctx.thresholds));
  }
  return finish_check("slices", items);
}

using CheckFn = Json (*)(const Context&);
const std::map<std::string, CheckFn>& check_table() {
  static const std::map<std::string, CheckFn> table{{"action", check_action},   {"lemma4", check_lemma4},
                                                    {"noether", check_noether}, {"slices", check_slices},
                                                    {"stress", check_stress},   {"theorem2", check_theorem2}};
  return table;
}

// ---------------------------------------------------------------------------

struct Options {
  std::string model, lattice, init, out, chart, point, traj, report, left, right, hamiltonian, solver;
  std::vector<std::string> checks, observables;
  std::uint64_t seed = 1;
  int instances = 50;
  int levels = 3;
  bool json = false;
  Thresholds thresholds;
};

int do_simulate(const Options& o, std::ostream& out) {
  Json model_json = read_json_file(o.model, "model");
  DynamicsModel model = model_from_json(model_json);
  LatticeSpec lattice = lattice_from_json(read_json_file(o.lattice, "lattice"));
  Json init_json = read_json_file(o.init, "init");
  InitialData init = init_from_json(init_json, model.chart);
  std::string solver = o.solver.empty() ? default_solver(model) : o.solver;
  LatticeTrajectory traj = simulate(model, lattice, init, solver);
  std::ofstream file(o.out);
  if (!file) throw SchemaError("out", "cannot write '" + o.out + "'");
  write_trajectory_csv(file, traj, model.chart,
                       {{"format_version", kFormatVersion},
                        {"model", model_json},
                        {"lattice", lattice_to_json(lattice)},
                        {"init", init_json},
                        {"solver", solver},
                        {"scheme", traj.scheme}});
  out << "wrote " << lattice.node_count() << " nodes (" << traj.scheme << ") to " << o.out << "\n";
  return kOk;
}

int do_verify(const Options& o, std::ostream& out) {
  std::ifstream in(o.traj);
  if (!in) throw SchemaError("traj", "cannot open '" + o.traj + "'");
  auto meta = read_trajectory_metadata(in);
  if (auto v = meta.find("format_version"); v != meta.end())
    check_format_version(Json{{"format_version", v->second}}, "traj.metadata");
  Json model_json;
  if (!o.model.empty()) {
    model_json = read_json_file(o.model, "model");
  } else if (auto m = meta.find("model"); m != meta.end()) {
    model_json = m->second;
  } else {
    throw SchemaError("traj.metadata.model", "missing; pass --model");
  }
  auto init_it = meta.find("init");
  if (init_it == meta.end()) throw SchemaError("traj.metadata.init", "missing");

  Context ctx{model_from_json(model_json), {}, {}, o.thresholds, o.observables, o.seed};
  ctx.init = init_from_json(init_it->second, ctx.model.chart);
  if (ctx.observables.empty()) ctx.observables = default_observables(ctx.model.chart);

  in.clear();
  in.seekg(0);
  TrajectoryFile file = read_trajectory_csv(in, ctx.model.chart);
  std::string solver = default_solver(ctx.model);
  if (auto s = meta.find("solver"); s != meta.end() && s->second.is_string()) solver = s->second.get<std::string>();
  ctx.levels.push_back(file.trajectory);
  LatticeSpec lat = file.trajectory.lattice;
  for (int l = 1; l < o.levels; ++l) {
    lat = lat.refined();
    ctx.levels.push_back(simulate(ctx.model, lat, ctx.init, solver));
  }

  std::set<std::string> requested(o.checks.begin(), o.checks.end());
  Json checks = Json::array();
  int failed = 0;
  for (const auto& name : requested) {
    Json c = check_table().at(name)(ctx);
    if (c["status"] != "pass") ++failed;
    out << name << ": " << c["status"].get<std::string>() << "\n";
    checks.push_back(std::move(c));
  }
  Json report = header("verify");
  Json nodes = Json::array();
  for (const auto& t : ctx.levels) nodes.push_back(t.lattice.node_count());
  report["levels"] = nodes;
  report["thresholds"] = {{"min_order", o.thresholds.min_order},
                          {"floor", o.thresholds.floor},
                          {"slice_tolerance", o.thresholds.slice_tolerance}};
  report["checks"] = checks;
  report["summary"] = {{"total", checks.size()}, {"failed", failed}, {"status", failed ? "fail" : "pass"}};
  if (!o.report.empty()) emit(report, o.report, out);
  return failed ? kCheckFailed : kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multisymplectic field theory toolkit: Legendre maps, brackets, lattice dynamics and checks"};
  app.require_subcommand(1);
  Options o;

  auto* model_cmd = app.add_subcommand("model", "Inspect a model definition");
  model_cmd->require_subcommand(1);
  auto* show = model_cmd->add_subcommand("show", "Print H, theta, Omega and the Legendre maps as JSON");
  show->add_option("--model", o.model, "Model JSON file")->required();

  auto* legendre = app.add_subcommand("legendre", "Link a point through the Legendre correspondence");
  legendre->add_option("--model", o.model, "Model JSON file")->required();
  legendre->add_option("--point", o.point, "Point JSON: {q, v, w, higher} or {coords}")->required();

  auto* bracket = app.add_subcommand("bracket", "Compute the p-bracket of two observable forms");
  bracket->add_option("--chart", o.chart, "Chart JSON file")->required();
  bracket->add_option("--left", o.left, "Left observable, e.g. 'P[y1](x2)'")->required();
  bracket->add_option("--right", o.right, "Right observable, e.g. 'Q[y1](1; 0)'")->required();
  bracket->add_option("--hamiltonian", o.hamiltonian, "H expression for Homega, eta and Pstar");
  bracket->add_flag("--json", o.json, "Print the form as JSON");

  auto* identities = app.add_subcommand("verify-identities", "Run the randomized symbolic identity suites");
  identities->add_option("--chart", o.chart, "Chart JSON file")->required();
  identities->add_option("--seed", o.seed, "Random seed");
  identities->add_option("--instances", o.instances, "Random instances per check")->check(CLI::PositiveNumber);
  identities->add_option("--report", o.report, "Write the JSON report here instead of stdout");

  auto* simulate_cmd = app.add_subcommand("simulate", "Integrate a model on a lattice");
  simulate_cmd->add_option("--model", o.model, "Model JSON file")->required();
  simulate_cmd->add_option("--lattice", o.lattice, "Lattice JSON file")->required();
  simulate_cmd->add_option("--init", o.init, "Initial data JSON file")->required();
  simulate_cmd->add_option("--out", o.out, "Trajectory CSV")->required();
  simulate_cmd->add_option("--solver", o.solver, "dw or el (default: dw, el for lagrangian models)")
      ->check(CLI::IsMember({"dw", "el"}));

  auto* verify = app.add_subcommand("verify", "Check a trajectory against the on-shell identities");
  verify->add_option("--traj", o.traj, "Trajectory CSV written by simulate")->required();
  verify->add_option("--model", o.model, "Model JSON (default: the one recorded in the CSV)");
  verify->add_option("--check", o.checks, "theorem2, lemma4, noether, stress, action or slices")
      ->required()
      ->check(CLI::IsMember({"theorem2", "lemma4", "noether", "stress", "action", "slices"}));
  verify->add_option("--report", o.report, "JSON report file");
  verify->add_option("--levels", o.levels, "Grids in the refinement ladder, the file being the coarsest")
      ->check(CLI::Range(2, 6));
  verify->add_option("--observable", o.observables, "Observables for theorem2 (default P and Q per field)");
  verify->add_option("--seed", o.seed, "Seed for random completions");
  verify->add_option("--min-order", o.thresholds.min_order, "Required convergence order");
  verify->add_option("--floor", o.thresholds.floor, "Residuals below this pass regardless of order")
      ->check(CLI::Range(std::numeric_limits<double>::epsilon(), 1.0));
  verify->add_option("--slice-tolerance", o.thresholds.slice_tolerance, "Tolerance of the slice pairing")
      ->check(CLI::Range(std::numeric_limits<double>::epsilon(), 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (show->parsed()) {
      emit(show_model(model_from_json(read_json_file(o.model, "model"))), "", out);
      return kOk;
    }
    if (legendre->parsed()) {
      DynamicsModel model = model_from_json(read_json_file(o.model, "model"));
      emit(legendre_report(model, read_json_file(o.point, "point")), "", out);
      return kOk;
    }
    if (bracket->parsed()) {
      Chart chart = chart_from_json(chart_document(o.chart));
      std::optional<Expr> h;
      if (!o.hamiltonian.empty()) h = expression_from_json(Json(o.hamiltonian), chart, {}, "hamiltonian");
      ObservableForm a = parse_observable(chart, o.left, h);
      ObservableForm b = parse_observable(chart, o.right, h);
      bool external = a.degree(chart) != chart.n() - 1;
      DifferentialForm result = external ? pbracket_external(chart, a, b) : pbracket_internal(chart, a, b);
      if (o.json) {
        Json j = header("bracket");
        j["kind"] = external ? "external" : "internal";
        j["left"] = o.left;
        j["right"] = o.right;
        j["form"] = form_to_json(result, chart);
        emit(j, "", out);
      } else {
        out << to_string(result, chart) << "\n";
      }
      return kOk;
    }
    if (identities->parsed()) {
      bool passed = false;
      Json report = identity_report(chart_from_json(chart_document(o.chart)), o.seed, o.instances, passed);
      emit(report, o.report, out);
      return passed ? kOk : kCheckFailed;
    }
    if (simulate_cmd->parsed()) return do_simulate(o, out);
    if (verify->parsed()) return do_verify(o, out);
  } catch (const BlowUp& e) {
    err << "error: " << e.what() << " (node " << e.node() << ")\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace pataplectic::cli
