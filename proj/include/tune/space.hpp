#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "tune/error.hpp"

namespace tune {

enum class ParamKind { NumericInt, NumericFloat, Categorical, Boolean };
enum class Scale { Linear, Log };

/// A typed parameter value: int64 / double / categorical choice / bool.
using Value = std::variant<std::int64_t, double, std::string, bool>;

std::string value_to_string(const Value& v);
bool value_equal(const Value& a, const Value& b);
double value_as_number(const Value& v); // numeric kinds only

struct ParameterSpec {
    std::string name;
    ParamKind kind = ParamKind::NumericFloat;
    double lo = 0.0;                  // numeric kinds, inclusive
    double hi = 0.0;
    std::vector<std::string> choices; // categorical
    Scale scale = Scale::Linear;
    Value default_value;
    std::string target_path;
};

enum class ConstraintKind { Implies, LessEqual, ForbiddenCombo };

struct Constraint {
    ConstraintKind kind = ConstraintKind::LessEqual;

    // implies: cfg[param] == equals  =>  cfg[then_param] <then_op> then_value
    // with then_op one of "le", "ge", "eq".
    std::string param;
    Value equals;
    std::string then_param;
    std::string then_op;
    Value then_value;

    // less-equal: cfg[lhs] <= cfg[rhs], both numeric.
    std::string lhs;
    std::string rhs;

    // forbidden-combo: all listed settings holding simultaneously is infeasible.
    std::vector<std::pair<std::string, Value>> settings;

    std::string describe() const;
};

struct ConfigSpace {
    std::vector<ParameterSpec> params; // order defines coordinate order
    std::vector<Constraint> constraints;
    std::string version;

    std::size_t dim() const { return params.size(); }
    int index_of(const std::string& name) const; // -1 when absent
    const ParameterSpec& at(const std::string& name) const;
    void rebuild_index();

private:
    std::map<std::string, int> index_;
};

/// Point in the unit hypercube [0,1]^d.
struct PointU {
    std::vector<double> coords;
    std::size_t dim() const { return coords.size(); }
};

struct TypedConfig {
    std::map<std::string, Value> values;
};

struct FeasibilityResult {
    std::vector<Constraint> violated;
    bool ok() const { return violated.empty(); }
};

using TemplateSet = std::map<std::string, std::string>;   // filename -> text
using ArtifactBundle = std::map<std::string, std::string>; // filename -> rendered text

PointU encode(const TypedConfig& cfg, const ConfigSpace& space);
TypedConfig decode(const PointU& x, const ConfigSpace& space);
FeasibilityResult check_feasible(const TypedConfig& cfg, const ConfigSpace& space);
ArtifactBundle materialize(const TypedConfig& cfg, const ConfigSpace& space, const TemplateSet& templates);

ConfigSpace load_space(const std::string& schema_file);
ConfigSpace parse_space(const std::string& json_text);
TemplateSet load_templates(const std::string& dir);

TypedConfig default_config(const ConfigSpace& space);

/// Render a value the way materialize writes it: ints bare, floats with the
/// shortest representation that round-trips, booleans lowercase.
std::string render_value(const Value& v, const ParameterSpec& spec);
std::string format_double_shortest(double v);

/// FNV-1a 64 over sorted (name, content) pairs; hex digest.
std::string bundle_hash(const ArtifactBundle& bundle);

} // namespace tune
