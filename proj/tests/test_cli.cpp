#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "doctest.h"
#include "pataplectic/dynamics.hpp"
#include "pataplectic/model_io.hpp"
#include "pataplectic/models.hpp"

using namespace pataplectic;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("pataplectic_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string data(const std::string& name) { return std::string(PATAPLECTIC_DATA) + "/" + name; }

Result run(const std::string& args, const std::string& env = "") {
  fs::path out = scratch() / "stdout.txt", err = scratch() / "stderr.txt";
  std::string cmd = env + " " + std::string(PATAPLECTIC_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path write(const std::string& name, const std::string& text) {
  fs::path p = scratch() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("help lists every subcommand and exits 0") {
  Result r = run("--help");
  CHECK(r.code == 0);
  for (const char* sub : {"model", "legendre", "bracket", "verify-identities", "simulate", "verify"})
    CHECK(r.out.find(sub) != std::string::npos);
  CHECK(run("verify --help").code == 0);
  CHECK(run("").code == 1);
  CHECK(run("frobnicate").code == 1);
}

TEST_CASE("model show prints H, theta, Omega and the Legendre maps") {
  Result r = run("model show --model " + data("kg.json"));
  REQUIRE(r.code == 0);
  Json j = Json::parse(r.out);
  CHECK(j["format_version"] == kFormatVersion);
  CHECK(j["kind"] == "scalar");
  Chart chart = chart_from_json(j["chart"]);
  Expr h = chart.parse(j["hamiltonian"].get<std::string>());
  Expr expected = chart.parse("eps + p1_1^2/2 - p2_1^2/2 + y1^2/2");
  CHECK(is_zero_value(h - expected));
  CHECK(form_from_json(j["theta"], chart) == cartan_form(chart));
  CHECK(form_from_json(j["Omega"], chart) == pataplectic_form(chart));
  CHECK(j["legendre_forward"].contains("p1_1"));
  CHECK(j["legendre_inverse"].contains("v1_2"));
}

TEST_CASE("legendre links a point with small residuals in both directions") {
  Result r = run("legendre --model " + data("kg.json") + " --point " + data("point.json"));
  REQUIRE(r.code == 0);
  Json j = Json::parse(r.out);
  CHECK(j["direction"] == "forward");
  for (const auto& [name, value] : j["residuals"].items()) CHECK(value.get<double>() <= 1e-10);
  // Feed the linked coordinates back as an inverse query.
  Json back{{"coords", j["coords"]}};
  fs::path p = write("back.json", back.dump());
  Result inv = run("legendre --model " + data("kg.json") + " --point " + p.string());
  REQUIRE(inv.code == 0);
  Json k = Json::parse(inv.out);
  CHECK(k["direction"] == "inverse");
  CHECK(k["velocity"]["v1_1"].get<double>() == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(k["velocity"]["v1_2"].get<double>() == doctest::Approx(-0.9).epsilon(1e-12));
  CHECK(std::abs(k["w"].get<double>()) <= 1e-12);
}

TEST_CASE("bracket of a field momentum with a position form") {
  Result r = run("bracket --json --chart " + data("weyl-2-1.json") + " --left 'P[y1](x2)' --right 'Q[y1](1; x1)'");
  REQUIRE(r.code == 0);
  Json j = Json::parse(r.out);
  CHECK(j["kind"] == "internal");
  Chart chart = Chart::weyl(2, 1);
  DifferentialForm got = form_from_json(j["form"], chart);
  // sum_a f^a g omega_a with omega_1 = dx2, omega_2 = -dx1.
  DifferentialForm expected(chart.dim(), 1);
  expected.add({1}, chart.parse("x2"));
  expected.add({0}, chart.parse("-x1*x2"));
  CHECK(got == expected);

  Result ext = run("bracket --chart " + data("weyl-2-1.json") +
                   " --left Homega --right 'Q[y1](1; 0)' --hamiltonian 'eps + p1_1^2/2'");
  CHECK(ext.code == 0);
  CHECK(run("bracket --chart " + data("weyl-2-1.json") + " --left Homega --right 'Q[y1](1; 0)'").code == 1);
  CHECK(run("bracket --chart " + data("weyl-2-1.json") + " --left 'P[y9](1)' --right 'Q[y1](1; 0)'").code == 1);
}

TEST_CASE("verify-identities on the (2,1) Weyl chart passes and is reproducible") {
  fs::path a = scratch() / "id_a.json", b = scratch() / "id_b.json";
  Result r = run("verify-identities --chart " + data("weyl-2-1.json") + " --seed 7 --report " + a.string());
  REQUIRE(r.code == 0);
  CHECK(run("verify-identities --chart " + data("weyl-2-1.json") + " --seed 7 --report " + b.string()).code == 0);
  CHECK(slurp(a) == slurp(b));
  Json j = Json::parse(slurp(a));
  CHECK(j["summary"]["status"] == "pass");
  std::vector<std::string> names;
  for (const auto& c : j["checks"]) {
    CHECK(c["status"] == "pass");
    names.push_back(c["name"]);
  }
  CHECK(std::is_sorted(names.begin(), names.end()));
  for (const char* expected : {"bracket.xi_homomorphism", "table.pq_fields", "admissibility.base_momentum_rejected",
                               "admissibility.external_equals_omega", "xi.generalized_position"})
    CHECK(std::find(names.begin(), names.end(), expected) != names.end());
}

TEST_CASE("malformed inputs exit 1 and name the offending field") {
  auto model_error = [](const std::string& text) {
    fs::path p = write("bad_model.json", text);
    Result r = run("model show --model " + p.string());
    CHECK(r.code == 1);
    return r.err;
  };
  CHECK(model_error(R"({"kind":"scalar","chart":{"n":2,"k":1},"metric_x":["1","-1"],"potential":"y1^2 + q"})")
            .find("model.potential") != std::string::npos);
  CHECK(model_error(R"({"kind":"scalar","chart":{"n":2,"k":1}})").find("model.metric_x") != std::string::npos);
  CHECK(model_error(R"({"kind":"scalar","chart":{"n":2,"k":1},"metric_x":["1"]})").find("model.metric_x") !=
        std::string::npos);
  CHECK(model_error(R"({"kind":"scalar","chart":{"n":2,"k":"1"},"metric_x":["1","-1"]})").find("model.chart.k") !=
        std::string::npos);
  CHECK(model_error(R"({"kind":"vector","chart":{"n":2,"k":1}})").find("model.kind") != std::string::npos);
  CHECK(model_error(R"({"kind":"scalar","chart":{"n":2,"k":1},"metric_x":["1","-1"],"colour":1})")
            .find("model.colour") != std::string::npos);
  CHECK(model_error(R"({"kind":"string","chart":{"n":2,"k":2},"metric_x":["1","-1"],"b_form":[["0","1"],["1","0"]]})")
            .find("model.b_form") != std::string::npos);
  CHECK(model_error(R"({"format_version":"2.0","kind":"scalar","chart":{"n":2,"k":1},"metric_x":["1","-1"]})")
            .find("model.format_version") != std::string::npos);
  CHECK(model_error("{not json").find("model") != std::string::npos);
  CHECK(run("model show --model /nonexistent/model.json").code == 1);

  fs::path lat = write("bad_lattice.json", R"({"axes":[{"nodes":5,"spacing":0.1},{"nodes":0,"spacing":0.1}]})");
  Result r = run("simulate --model " + data("kg.json") + " --lattice " + lat.string() + " --init " + data("init.json") +
                 " --out " + (scratch() / "x.csv").string());
  CHECK(r.code == 1);
  CHECK(r.err.find("lattice.axes[1].nodes") != std::string::npos);

  fs::path init = write("bad_init.json", R"({"fields":["y1"],"velocities":["0"]})");
  r = run("simulate --model " + data("kg.json") + " --lattice " + data("lattice.json") + " --init " + init.string() +
          " --out " + (scratch() / "x.csv").string());
  CHECK(r.code == 1);
  CHECK(r.err.find("init.fields[0]") != std::string::npos);
}

TEST_CASE("simulate then verify on the Klein-Gordon preset") {
  fs::path csv = scratch() / "kg.csv", report = scratch() / "kg_report.json";
  Result s = run("simulate --model " + data("kg.json") + " --lattice " + data("lattice.json") + " --init " +
                 data("init.json") + " --out " + csv.string());
  REQUIRE(s.code == 0);
  Result v = run("verify --traj " + csv.string() + " --check theorem2 --check theorem2 --check action --report " +
                 report.string());
  CHECK(v.code == 0);
  Json j = Json::parse(slurp(report));
  REQUIRE(j["checks"].size() == 2);
  CHECK(j["checks"][0]["name"] == "action");
  CHECK(j["checks"][1]["name"] == "theorem2");
  CHECK(j["levels"].size() == 3);
  for (const auto& item : j["checks"][1]["items"]) {
    CHECK(item["status"] == "pass");
    if (item["name"] == "P[y1](1)") CHECK(item["order"].get<double>() == doctest::Approx(2.0).epsilon(0.15));
  }
  std::string first = slurp(report);
  CHECK(run("verify --traj " + csv.string() + " --check action --check theorem2 --report " + report.string()).code == 0);
  CHECK(slurp(report) == first);
  CHECK(first.find("time") == std::string::npos);

  // An unreachable order requirement turns into a failed check.
  CHECK(run("verify --traj " + csv.string() + " --check stress --min-order 5 --floor 1e-15").code == 2);
  CHECK(run("verify --traj " + csv.string() + " --check stress --floor 0").code == 1);
  CHECK(run("verify --traj " + (scratch() / "missing.csv").string() + " --check stress").code == 1);
}

TEST_CASE("every check runs on the Klein-Gordon trajectory") {
  fs::path csv = scratch() / "kg_all.csv", report = scratch() / "kg_all.json";
  REQUIRE(run("simulate --model " + data("kg.json") + " --lattice " + data("lattice.json") + " --init " +
              data("init.json") + " --out " + csv.string())
              .code == 0);
  Result v = run("verify --traj " + csv.string() +
                 " --check theorem2 --check lemma4 --check noether --check stress --check action --check slices"
                 " --report " +
                 report.string());
  CHECK(v.code == 0);
  Json j = Json::parse(slurp(report));
  CHECK(j["summary"]["total"] == 6);
  CHECK(j["summary"]["failed"] == 0);
  for (const auto& c : j["checks"]) {
    if (c["name"] != "noether") continue;
    for (const auto& item : c["items"])
      if (item["name"] == "d/dy1") {
        CHECK(item["symmetric"] == false);
        CHECK(!item["witness"].get<std::string>().empty());
      }
  }
}

TEST_CASE("trajectory CSV round trips bit for bit and is thread-independent") {
  fs::path one = scratch() / "t1.csv", many = scratch() / "t4.csv";
  std::string args = "simulate --model " + data("kg.json") + " --lattice " + data("lattice.json") + " --init " +
                     data("init.json") + " --out ";
  REQUIRE(run(args + one.string(), "PATAPLECTIC_THREADS=1").code == 0);
  REQUIRE(run(args + many.string(), "PATAPLECTIC_THREADS=4").code == 0);
  CHECK(slurp(one) == slurp(many));

  auto model = DynamicsModel::from(klein_gordon_preset(2));
  std::ifstream in(one);
  TrajectoryFile file = read_trajectory_csv(in, model.chart);
  LatticeSpec lat = lattice_from_json(read_json_file(data("lattice.json"), "lattice"));
  InitialData init = init_from_json(read_json_file(data("init.json"), "init"), model.chart);
  LatticeTrajectory direct = solve_dw(model, lat, init);
  REQUIRE(file.trajectory.data.size() == direct.data.size());
  CHECK(file.trajectory.data == direct.data);
  CHECK(file.metadata.at("solver") == "dw");
}

TEST_CASE("string model files simulate and verify") {
  fs::path csv = scratch() / "string.csv";
  REQUIRE(run("simulate --model " + data("string.json") + " --lattice " + data("string-lattice.json") + " --init " +
              data("string-init.json") + " --out " + csv.string())
              .code == 0);
  Result v = run("verify --traj " + csv.string() + " --check action --check lemma4 --levels 3");
  CHECK(v.code == 0);
  CHECK(v.out.find("action: pass") != std::string::npos);
  CHECK(v.out.find("lemma4: pass") != std::string::npos);
}

TEST_CASE("form JSON round trip and schema errors") {
  Chart chart = Chart::weyl(2, 1);
  DifferentialForm a(chart.dim(), 2);
  a.add({0, 2}, chart.parse("x1^2 * y1 + 3/2"));
  a.add({1, 4}, chart.parse("sin(x2) * p1_1"));
  Json j = form_to_json(a, chart);
  CHECK(j["degree"] == 2);
  CHECK(form_from_json(j, chart) == a);
  Json named = Json::parse(R"({"degree":1,"terms":[{"index":["y1"],"coeff":"x1"}]})");
  CHECK(form_from_json(named, chart) == DifferentialForm::basis(chart.dim(), chart.y(0), chart.parse("x1")));
  try {
    form_from_json(Json::parse(R"({"degree":1,"terms":[{"index":["z"],"coeff":"1"}]})"), chart);
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(e.field() == "form.terms[0].index[0]");
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}
