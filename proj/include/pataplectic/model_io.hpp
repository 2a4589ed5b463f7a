#pragma once

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "pataplectic/chart.hpp"
#include "pataplectic/dynamics.hpp"
#include "pataplectic/forms.hpp"
#include "pataplectic/matrix.hpp"

namespace pataplectic {

using Json = nlohmann::json;

/// Input that does not match a schema. `field()` is a dotted path such as
/// "model.metric_x[1][0]".
class SchemaError : public std::invalid_argument {
 public:
  SchemaError(const std::string& field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

inline constexpr const char* kFormatVersion = "1.0";

/// Rejects documents whose "format_version" has an unknown major version.
void check_format_version(const Json& doc, const std::string& where);

/// {n, k, momentum_degrees?, volume_weight?}
Chart chart_from_json(const Json& j, const std::string& where = "chart");
Json chart_to_json(const Chart& chart);

/// Parameters: name -> number or expression string in the chart grammar.
std::map<std::string, Expr> parameters_from_json(const Json& j, const Chart& chart, const std::string& where);
Expr expression_from_json(const Json& j, const Chart& chart, const std::map<std::string, Expr>& parameters,
                          const std::string& where);
/// Nested rows or a list of diagonal entries.
ExprMatrix matrix_from_json(const Json& j, int size, const Chart& chart,
                            const std::map<std::string, Expr>& parameters, const std::string& where);

/// Model file: {kind: scalar|string|lagrangian, chart, parameters?, metric_x,
/// potential?, metric_y?, b_form?, lagrangian?}. Scalar models default to V = 0,
/// string models to h = identity and b = 0.
DynamicsModel model_from_json(const Json& j);

/// {axes: [{nodes, spacing | length, origin?, boundary?}], time_axis?}
LatticeSpec lattice_from_json(const Json& j);
Json lattice_to_json(const LatticeSpec& lattice);

/// {fields: [...], velocities: [...], parameters?}; expressions may use the
/// base coordinates only.
InitialData init_from_json(const Json& j, const Chart& chart);

/// {degree, terms: [{index: [...], coeff: "<expr>"}]}; index entries are
/// coordinate ids or chart names.
Json form_to_json(const DifferentialForm& form, const Chart& chart);
DifferentialForm form_from_json(const Json& j, const Chart& chart, const std::string& where = "form");

/// Reads a JSON file; throws SchemaError on IO or syntax errors.
Json read_json_file(const std::string& path, const std::string& where);

/// Shortest decimal that reads back to the same double.
std::string format_double(double value);

/// Trajectory CSV: "# key: <json>" metadata lines, a header row naming the
/// chart coordinates (x, y, momenta, eps) and one row per node.
void write_trajectory_csv(std::ostream& out, const LatticeTrajectory& traj, const Chart& chart,
                          const std::map<std::string, Json>& metadata);
struct TrajectoryFile {
  LatticeTrajectory trajectory;
  std::map<std::string, Json> metadata;
};
/// `chart` fixes the column layout; the lattice comes from the metadata.
TrajectoryFile read_trajectory_csv(std::istream& in, const Chart& chart);
/// Metadata only, so the model can be read before the body.
std::map<std::string, Json> read_trajectory_metadata(std::istream& in);

}  // namespace pataplectic
