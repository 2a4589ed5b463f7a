#include "pataplectic/model_io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "pataplectic/models.hpp"

namespace pataplectic {

namespace {

std::string at(const std::string& where, const std::string& key) { return where + "." + key; }
std::string at(const std::string& where, std::size_t i) { return where + "[" + std::to_string(i) + "]"; }

const Json& require(const Json& j, const std::string& key, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(at(where, key), "missing");
  return *it;
}

int as_int(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) throw SchemaError(where, "expected an integer");
  return j.get<int>();
}

double as_double(const Json& j, const std::string& where) {
  if (!j.is_number()) throw SchemaError(where, "expected a number");
  return j.get<double>();
}

void reject_unknown(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw SchemaError(at(where, key), "unknown field");
  }
}

}  // namespace

void check_format_version(const Json& doc, const std::string& where) {
  if (!doc.is_object() || !doc.contains("format_version")) return;
  const Json& v = doc["format_version"];
  if (!v.is_string()) throw SchemaError(at(where, "format_version"), "expected a string");
  std::string s = v.get<std::string>();
  std::string major = s.substr(0, s.find('.'));
  std::string ours(kFormatVersion);
  if (major != ours.substr(0, ours.find('.')))
    throw SchemaError(at(where, "format_version"), "unsupported major version " + s);
}

Chart chart_from_json(const Json& j, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where, "expected an object");
  reject_unknown(j, {"n", "k", "momentum_degrees", "volume_weight", "format_version"}, where);
  int n = as_int(require(j, "n", where), at(where, "n"));
  int k = as_int(require(j, "k", where), at(where, "k"));
  if (n < 1) throw SchemaError(at(where, "n"), "must be at least 1");
  if (k < 1) throw SchemaError(at(where, "k"), "must be at least 1");
  std::set<int> degrees{0, 1};
  if (j.contains("momentum_degrees")) {
    const Json& d = j["momentum_degrees"];
    std::string w = at(where, "momentum_degrees");
    if (!d.is_array()) throw SchemaError(w, "expected an array");
    degrees.clear();
    for (std::size_t i = 0; i < d.size(); ++i) {
      int v = as_int(d[i], at(w, i));
      if (v < 0 || v > n) throw SchemaError(at(w, i), "degree outside 0..n");
      degrees.insert(v);
    }
  }
  Chart chart;
  try {
    chart = Chart(n, k, degrees);
  } catch (const std::exception& e) {
    throw SchemaError(at(where, "momentum_degrees"), e.what());
  }
  if (j.contains("volume_weight")) {
    Expr g = expression_from_json(j["volume_weight"], chart, {}, at(where, "volume_weight"));
    try {
      chart = chart.with_volume_weight(g);
    } catch (const std::exception& e) {
      throw SchemaError(at(where, "volume_weight"), e.what());
    }
  }
  return chart;
}

Json chart_to_json(const Chart& chart) {
  Json j{{"n", chart.n()}, {"k", chart.k()}, {"momentum_degrees", chart.momentum_degrees()}};
  if (!(chart.volume_weight() == Expr(1))) j["volume_weight"] = chart.print(chart.volume_weight());
  return j;
}

Expr expression_from_json(const Json& j, const Chart& chart, const std::map<std::string, Expr>& parameters,
                          const std::string& where) {
  std::string text;
  if (j.is_string())
    text = j.get<std::string>();
  else if (j.is_number())
    text = j.dump();
  else
    throw SchemaError(where, "expected an expression string or a number");
  try {
    return chart.parse(text, parameters);
  } catch (const std::exception& e) {
    throw SchemaError(where, e.what());
  }
}

std::map<std::string, Expr> parameters_from_json(const Json& j, const Chart& chart, const std::string& where) {
  std::map<std::string, Expr> out;
  if (j.is_null()) return out;
  if (!j.is_object()) throw SchemaError(where, "expected an object");
  for (const auto& [name, value] : j.items()) {
    if (chart.lookup(name)) throw SchemaError(at(where, name), "shadows a chart coordinate");
    out[name] = expression_from_json(value, chart, out, at(where, name));
  }
  return out;
}

ExprMatrix matrix_from_json(const Json& j, int size, const Chart& chart,
                            const std::map<std::string, Expr>& parameters, const std::string& where) {
  if (!j.is_array()) throw SchemaError(where, "expected an array");
  if (static_cast<int>(j.size()) != size)
    throw SchemaError(where, "expected " + std::to_string(size) + " entries, got " + std::to_string(j.size()));
  ExprMatrix m(size, size);
  bool nested = size > 0 && j[0].is_array();
  for (int r = 0; r < size; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    std::string w = at(where, static_cast<std::size_t>(r));
    if (!nested) {
      if (row.is_array()) throw SchemaError(w, "mixed diagonal and nested rows");
      m(r, r) = expression_from_json(row, chart, parameters, w);
      continue;
    }
    if (!row.is_array() || static_cast<int>(row.size()) != size)
      throw SchemaError(w, "expected a row of " + std::to_string(size) + " entries");
    for (int c = 0; c < size; ++c)
      m(r, c) = expression_from_json(row[static_cast<std::size_t>(c)], chart, parameters,
                                     at(w, static_cast<std::size_t>(c)));
  }
  return m;
}

DynamicsModel model_from_json(const Json& j) {
  const std::string where = "model";
  if (!j.is_object()) throw SchemaError(where, "expected an object");
  check_format_version(j, where);
  reject_unknown(j,
                 {"format_version", "kind", "chart", "parameters", "metric_x", "potential", "metric_y", "b_form",
                  "lagrangian", "description"},
                 where);
  const Json& kind_json = require(j, "kind", where);
  if (!kind_json.is_string()) throw SchemaError(at(where, "kind"), "expected a string");
  std::string kind = kind_json.get<std::string>();
  if (kind != "scalar" && kind != "string" && kind != "lagrangian")
    throw SchemaError(at(where, "kind"), "expected scalar, string or lagrangian, got '" + kind + "'");

  Json chart_json = require(j, "chart", where);
  if (kind == "string" && chart_json.is_object() && !chart_json.contains("momentum_degrees"))
    chart_json["momentum_degrees"] = {0, 1, 2};
  Chart chart = chart_from_json(chart_json, at(where, "chart"));
  auto params = parameters_from_json(j.value("parameters", Json()), chart, at(where, "parameters"));
  auto forbid = [&](const char* key) {
    if (j.contains(key)) throw SchemaError(at(where, key), "not used by kind " + kind);
  };

  {
    if (kind == "scalar") {
      forbid("metric_y");
      forbid("b_form");
      forbid("lagrangian");
      if (chart.momentum_degrees() != std::set<int>{0, 1})
        throw SchemaError(at(where, "chart.momentum_degrees"), "scalar models use degrees [0, 1]");
      ExprMatrix g = matrix_from_json(require(j, "metric_x", where), chart.n(), chart, params, at(where, "metric_x"));
      Expr v = j.contains("potential") ? expression_from_json(j["potential"], chart, params, at(where, "potential"))
                                       : Expr();
      for (int s : v.symbols())
        if (!chart.is_base(s) && !chart.is_field(s))
          throw SchemaError(at(where, "potential"), "may depend on x and y only, found " + chart.name(s));
      try {
        return DynamicsModel::from(build_scalar_model(chart, g, v));
      } catch (const std::invalid_argument& e) {
        throw SchemaError(at(where, "metric_x"), e.what());
      }
    }
    if (kind == "string") {
      forbid("potential");
      forbid("lagrangian");
      if (chart.n() != 2) throw SchemaError(at(where, "chart.n"), "string models have n = 2");
      const int k = chart.k();
      ExprMatrix g = matrix_from_json(require(j, "metric_x", where), 2, chart, params, at(where, "metric_x"));
      ExprMatrix h = j.contains("metric_y") ? matrix_from_json(j["metric_y"], k, chart, params, at(where, "metric_y"))
                                            : ExprMatrix::identity(k);
      ExprMatrix b(k, k);
      if (j.contains("b_form")) b = matrix_from_json(j["b_form"], k, chart, params, at(where, "b_form"));
      for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) {
          for (int s : h(r, c).symbols())
            if (!chart.is_field(s)) throw SchemaError(at(where, "metric_y"), "may depend on y only");
          for (int s : b(r, c).symbols())
            if (!chart.is_field(s)) throw SchemaError(at(where, "b_form"), "may depend on y only");
        }
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c)
          for (int s : g(r, c).symbols())
            if (!chart.is_base(s)) throw SchemaError(at(where, "metric_x"), "may depend on x only");
      try {
        return DynamicsModel::from(build_string_model(chart, g, h, b));
      } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        std::string field = msg.find("target") != std::string::npos ? "metric_y"
                            : msg.find("b must") != std::string::npos ? "b_form"
                            : msg.find("chart") != std::string::npos  ? "chart.momentum_degrees"
                                                                      : "metric_x";
        throw SchemaError(at(where, field), msg);
      }
    }
    forbid("metric_x");
    forbid("metric_y");
    forbid("b_form");
    forbid("potential");
    Expr l = expression_from_json(require(j, "lagrangian", where), chart, params, at(where, "lagrangian"));
    for (int s : l.symbols())
      if (!chart.is_base(s) && !chart.is_field(s) && !chart.is_velocity(s))
        throw SchemaError(at(where, "lagrangian"), "may depend on x, y and velocities only, found " + chart.name(s));
    try {
      return DynamicsModel::from(LagrangianModel(chart, l));
    } catch (const std::exception& e) {
      throw SchemaError(at(where, "lagrangian"), e.what());
    }
  }
}

LatticeSpec lattice_from_json(const Json& j) {
  const std::string where = "lattice";
  if (!j.is_object()) throw SchemaError(where, "expected an object");
  check_format_version(j, where);
  reject_unknown(j, {"format_version", "axes", "time_axis"}, where);
  const Json& axes = require(j, "axes", where);
  if (!axes.is_array() || axes.empty()) throw SchemaError(at(where, "axes"), "expected a non-empty array");
  LatticeSpec lat;
  for (std::size_t a = 0; a < axes.size(); ++a) {
    std::string w = at(at(where, "axes"), a);
    const Json& ax = axes[a];
    if (!ax.is_object()) throw SchemaError(w, "expected an object");
    reject_unknown(ax, {"nodes", "spacing", "length", "origin", "boundary"}, w);
    LatticeAxis axis;
    axis.nodes = as_int(require(ax, "nodes", w), at(w, "nodes"));
    if (ax.contains("boundary")) {
      const Json& b = ax["boundary"];
      std::string s = b.is_string() ? b.get<std::string>() : "";
      if (s == "periodic")
        axis.boundary = Boundary::Periodic;
      else if (s == "fixed")
        axis.boundary = Boundary::Fixed;
      else
        throw SchemaError(at(w, "boundary"), "expected periodic or fixed");
    }
    if (ax.contains("origin")) axis.origin = as_double(ax["origin"], at(w, "origin"));
    bool has_spacing = ax.contains("spacing"), has_length = ax.contains("length");
    if (has_spacing == has_length) throw SchemaError(at(w, "spacing"), "give exactly one of spacing and length");
    if (has_spacing) {
      axis.spacing = as_double(ax["spacing"], at(w, "spacing"));
    } else {
      double length = as_double(ax["length"], at(w, "length"));
      bool time = static_cast<int>(a) == j.value("time_axis", 0);
      int cells = axis.boundary == Boundary::Periodic && !time ? axis.nodes : axis.nodes - 1;
      if (cells < 1) throw SchemaError(at(w, "nodes"), "too few nodes for a length");
      axis.spacing = length / cells;
    }
    lat.axes.push_back(axis);
  }
  if (j.contains("time_axis")) lat.time_axis = as_int(j["time_axis"], at(where, "time_axis"));
  lat.validate();
  return lat;
}

Json lattice_to_json(const LatticeSpec& lattice) {
  Json axes = Json::array();
  for (const auto& a : lattice.axes)
    axes.push_back({{"nodes", a.nodes},
                    {"spacing", a.spacing},
                    {"origin", a.origin},
                    {"boundary", a.boundary == Boundary::Periodic ? "periodic" : "fixed"}});
  return Json{{"axes", axes}, {"time_axis", lattice.time_axis}};
}

InitialData init_from_json(const Json& j, const Chart& chart) {
  const std::string where = "init";
  if (!j.is_object()) throw SchemaError(where, "expected an object");
  check_format_version(j, where);
  reject_unknown(j, {"format_version", "fields", "velocities", "parameters"}, where);
  auto params = parameters_from_json(j.value("parameters", Json()), chart, at(where, "parameters"));
  auto list = [&](const char* key) {
    const Json& arr = require(j, key, where);
    std::string w = at(where, key);
    if (!arr.is_array() || static_cast<int>(arr.size()) != chart.k())
      throw SchemaError(w, "expected " + std::to_string(chart.k()) + " expressions");
    std::vector<Expr> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Expr e = expression_from_json(arr[i], chart, params, at(w, i));
      for (int s : e.symbols())
        if (!chart.is_base(s)) throw SchemaError(at(w, i), "may depend on base coordinates only, found " + chart.name(s));
      out.push_back(e);
    }
    return out;
  };
  return InitialData{list("fields"), list("velocities")};
}

Json form_to_json(const DifferentialForm& form, const Chart& chart) {
  Json terms = Json::array();
  for (const auto& [index, coeff] : form.terms()) {
    Json names = Json::array();
    for (int i : index) names.push_back(chart.name(i));
    terms.push_back({{"index", index}, {"names", names}, {"coeff", chart.print(coeff)}});
  }
  return Json{{"degree", form.degree()}, {"terms", terms}};
}

DifferentialForm form_from_json(const Json& j, const Chart& chart, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where, "expected an object");
  int degree = as_int(require(j, "degree", where), at(where, "degree"));
  if (degree < 0 || degree > chart.dim()) throw SchemaError(at(where, "degree"), "outside 0..dim");
  DifferentialForm out(chart.dim(), degree);
  const Json& terms = require(j, "terms", where);
  if (!terms.is_array()) throw SchemaError(at(where, "terms"), "expected an array");
  for (std::size_t t = 0; t < terms.size(); ++t) {
    std::string w = at(at(where, "terms"), t);
    const Json& idx = require(terms[t], "index", w);
    if (!idx.is_array() || static_cast<int>(idx.size()) != degree)
      throw SchemaError(at(w, "index"), "expected " + std::to_string(degree) + " entries");
    std::vector<int> index;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::string wi = at(at(w, "index"), i);
      int id = -1;
      if (idx[i].is_string()) {
        auto found = chart.lookup(idx[i].get<std::string>());
        if (!found || *found >= chart.dim()) throw SchemaError(wi, "unknown coordinate");
        id = *found;
      } else {
        id = as_int(idx[i], wi);
      }
      if (id < 0 || id >= chart.dim()) throw SchemaError(wi, "coordinate outside the chart");
      index.push_back(id);
    }
    out.add(std::span<const int>(index), expression_from_json(require(terms[t], "coeff", w), chart, {}, at(w, "coeff")));
  }
  return out;
}

Json read_json_file(const std::string& path, const std::string& where) {
  std::ifstream in(path);
  if (!in) throw SchemaError(where, "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw SchemaError(where, std::string("invalid JSON in '") + path + "': " + e.what());
  }
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

namespace {

// Column order: x, y, momenta, eps.
std::vector<int> column_ids(const Chart& chart) {
  std::vector<int> ids;
  for (int a = 0; a < chart.n() + chart.k(); ++a) ids.push_back(a);
  for (const auto& m : chart.momenta())
    if (m.degree() > 0) ids.push_back(m.symbol);
  ids.push_back(chart.eps());
  return ids;
}

}  // namespace

void write_trajectory_csv(std::ostream& out, const LatticeTrajectory& traj, const Chart& chart,
                          const std::map<std::string, Json>& metadata) {
  if (traj.dim != chart.dim()) throw std::invalid_argument("trajectory does not match the chart");
  for (const auto& [key, value] : metadata) out << "# " << key << ": " << value.dump() << "\n";
  auto ids = column_ids(chart);
  for (std::size_t c = 0; c < ids.size(); ++c) out << (c ? "," : "") << chart.name(ids[c]);
  out << "\n";
  for (std::size_t node = 0; node < traj.lattice.node_count(); ++node) {
    for (std::size_t c = 0; c < ids.size(); ++c) out << (c ? "," : "") << format_double(traj.at(node, ids[c]));
    out << "\n";
  }
}

std::map<std::string, Json> read_trajectory_metadata(std::istream& in) {
  std::map<std::string, Json> meta;
  std::string line;
  while (in.peek() == '#' && std::getline(in, line)) {
    auto colon = line.find(':');
    if (colon == std::string::npos || line.size() < 3) throw SchemaError("traj.metadata", "malformed line: " + line);
    std::string key = line.substr(2, colon - 2);
    try {
      meta[key] = Json::parse(line.substr(colon + 1));
    } catch (const Json::parse_error& e) {
      throw SchemaError("traj.metadata." + key, e.what());
    }
  }
  return meta;
}

TrajectoryFile read_trajectory_csv(std::istream& in, const Chart& chart) {
  TrajectoryFile file;
  file.metadata = read_trajectory_metadata(in);
  auto it = file.metadata.find("lattice");
  if (it == file.metadata.end()) throw SchemaError("traj.metadata.lattice", "missing");
  LatticeTrajectory& traj = file.trajectory;
  traj.lattice = lattice_from_json(it->second);
  traj.dim = chart.dim();
  if (auto s = file.metadata.find("scheme"); s != file.metadata.end() && s->second.is_string())
    traj.scheme = s->second.get<std::string>();

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("traj.header", "missing");
  std::vector<int> columns;
  {
    std::stringstream ss(line);
    std::string name;
    while (std::getline(ss, name, ',')) {
      auto id = chart.lookup(name);
      if (!id || *id >= chart.dim()) throw SchemaError("traj.header", "unknown column '" + name + "'");
      columns.push_back(*id);
    }
  }
  if (static_cast<int>(columns.size()) != chart.dim())
    throw SchemaError("traj.header", "expected " + std::to_string(chart.dim()) + " columns");
  const std::size_t nodes = traj.lattice.node_count();
  traj.data.assign(nodes * static_cast<std::size_t>(traj.dim), 0.0);
  for (std::size_t node = 0; node < nodes; ++node) {
    std::string where = "traj.row[" + std::to_string(node) + "]";
    if (!std::getline(in, line)) throw SchemaError(where, "missing");
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t c = 0; c < columns.size(); ++c) {
      double v = 0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) throw SchemaError(where, "bad number in column " + std::to_string(c));
      traj.data[node * static_cast<std::size_t>(traj.dim) + static_cast<std::size_t>(columns[c])] = v;
      p = next;
      if (c + 1 < columns.size()) {
        if (p == end || *p != ',') throw SchemaError(where, "expected " + std::to_string(columns.size()) + " values");
        ++p;
      }
    }
    if (p != end) throw SchemaError(where, "trailing data");
  }
  return file;
}

}  // namespace pataplectic
