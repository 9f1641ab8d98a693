#include "tune/space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace tune {

using nlohmann::json;

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::ParseError: return "ParseError";
        case Errc::SchemaInvalid: return "SchemaInvalid";
        case Errc::ValueOutOfBounds: return "ValueOutOfBounds";
        case Errc::UnknownParameter: return "UnknownParameter";
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::UnresolvedPlaceholder: return "UnresolvedPlaceholder";
        case Errc::DuplicatePlaceholder: return "DuplicatePlaceholder";
        case Errc::SingularKernel: return "SingularKernel";
        case Errc::ModelUnavailable: return "ModelUnavailable";
        case Errc::NoIncumbent: return "NoIncumbent";
        case Errc::TooFewObservations: return "TooFewObservations";
        case Errc::MalformedReport: return "MalformedReport";
        case Errc::ReferenceFailed: return "ReferenceFailed";
        case Errc::NoValidObservations: return "NoValidObservations";
        case Errc::DuplicateMethod: return "DuplicateMethod";
        case Errc::IoError: return "IoError";
        case Errc::InvalidArgument: return "InvalidArgument";
    }
    return "UnknownError";
}

std::string value_to_string(const Value& v) {
    switch (v.index()) {
        case 0: return std::to_string(std::get<std::int64_t>(v));
        case 1: return format_double_shortest(std::get<double>(v));
        case 2: return std::get<std::string>(v);
        default: return std::get<bool>(v) ? "true" : "false";
    }
}

bool value_equal(const Value& a, const Value& b) {
    if (a.index() == b.index()) return a == b;
    // int/double comparisons arise when JSON literals lose the int type
    if ((a.index() == 0 || a.index() == 1) && (b.index() == 0 || b.index() == 1))
        return value_as_number(a) == value_as_number(b);
    return false;
}

double value_as_number(const Value& v) {
    if (v.index() == 0) return static_cast<double>(std::get<std::int64_t>(v));
    if (v.index() == 1) return std::get<double>(v);
    raise(Errc::InvalidArgument, "value is not numeric: " + value_to_string(v));
}

std::string Constraint::describe() const {
    std::ostringstream os;
    switch (kind) {
        case ConstraintKind::Implies:
            os << "implies(" << param << "=" << value_to_string(equals) << " => " << then_param
               << " " << then_op << " " << value_to_string(then_value) << ")";
            break;
        case ConstraintKind::LessEqual:
            os << "less-equal(" << lhs << " <= " << rhs << ")";
            break;
        case ConstraintKind::ForbiddenCombo: {
            os << "forbidden-combo(";
            bool first = true;
            for (const auto& [name, val] : settings) {
                if (!first) os << ", ";
                os << name << "=" << value_to_string(val);
                first = false;
            }
            os << ")";
            break;
        }
    }
    return os.str();
}

int ConfigSpace::index_of(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

const ParameterSpec& ConfigSpace::at(const std::string& name) const {
    int i = index_of(name);
    if (i < 0) raise(Errc::UnknownParameter, name);
    return params[static_cast<std::size_t>(i)];
}

void ConfigSpace::rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) index_[params[i].name] = static_cast<int>(i);
}

namespace {

double round_half_even(double v) {
    double f = std::floor(v);
    double frac = v - f;
    if (frac > 0.5) return f + 1.0;
    if (frac < 0.5) return f;
    return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

const Value& value_for(const TypedConfig& cfg, const ParameterSpec& p) {
    auto it = cfg.values.find(p.name);
    if (it == cfg.values.end()) raise(Errc::UnknownParameter, "missing value for " + p.name);
    return it->second;
}

double encode_one(const ParameterSpec& p, const Value& v) {
    switch (p.kind) {
        case ParamKind::NumericInt:
        case ParamKind::NumericFloat: {
            double x = value_as_number(v);
            if (x < p.lo || x > p.hi)
                raise(Errc::ValueOutOfBounds,
                      p.name + "=" + value_to_string(v) + " outside [" +
                          format_double_shortest(p.lo) + ", " + format_double_shortest(p.hi) + "]");
            if (p.scale == Scale::Log) return (std::log(x) - std::log(p.lo)) / (std::log(p.hi) - std::log(p.lo));
            return (x - p.lo) / (p.hi - p.lo);
        }
        case ParamKind::Categorical: {
            if (v.index() != 2) raise(Errc::ValueOutOfBounds, p.name + ": expected categorical choice");
            const auto& s = std::get<std::string>(v);
            auto it = std::find(p.choices.begin(), p.choices.end(), s);
            if (it == p.choices.end()) raise(Errc::ValueOutOfBounds, p.name + ": unknown choice '" + s + "'");
            double m = static_cast<double>(p.choices.size());
            return (static_cast<double>(it - p.choices.begin()) + 0.5) / m;
        }
        case ParamKind::Boolean: {
            if (v.index() != 3) raise(Errc::ValueOutOfBounds, p.name + ": expected boolean");
            return std::get<bool>(v) ? 0.75 : 0.25;
        }
    }
    raise(Errc::InvalidArgument, "bad kind");
}

Value decode_one(const ParameterSpec& p, double x) {
    switch (p.kind) {
        case ParamKind::NumericInt: {
            double v = p.scale == Scale::Log
                           ? std::exp(std::log(p.lo) + x * (std::log(p.hi) - std::log(p.lo)))
                           : p.lo + x * (p.hi - p.lo);
            v = round_half_even(v);
            v = std::clamp(v, p.lo, p.hi);
            return static_cast<std::int64_t>(v);
        }
        case ParamKind::NumericFloat: {
            double v = p.scale == Scale::Log
                           ? std::exp(std::log(p.lo) + x * (std::log(p.hi) - std::log(p.lo)))
                           : p.lo + x * (p.hi - p.lo);
            return std::clamp(v, p.lo, p.hi);
        }
        case ParamKind::Categorical: {
            double m = static_cast<double>(p.choices.size());
            auto idx = static_cast<std::size_t>(std::min(std::floor(x * m), m - 1.0));
            return p.choices[idx];
        }
        case ParamKind::Boolean:
            return x >= 0.5;
    }
    raise(Errc::InvalidArgument, "bad kind");
}

} // namespace

PointU encode(const TypedConfig& cfg, const ConfigSpace& space) {
    if (cfg.values.size() != space.params.size())
        raise(Errc::UnknownParameter, "config has " + std::to_string(cfg.values.size()) +
                                          " values, space has " + std::to_string(space.params.size()));
    PointU x;
    x.coords.reserve(space.dim());
    for (const auto& p : space.params) x.coords.push_back(encode_one(p, value_for(cfg, p)));
    return x;
}

TypedConfig decode(const PointU& x, const ConfigSpace& space) {
    if (x.dim() != space.dim())
        raise(Errc::DimensionMismatch,
              "point has " + std::to_string(x.dim()) + " coords, space d=" + std::to_string(space.dim()));
    TypedConfig cfg;
    for (std::size_t i = 0; i < space.params.size(); ++i)
        cfg.values[space.params[i].name] = decode_one(space.params[i], x.coords[i]);
    return cfg;
}

namespace {

bool holds(const TypedConfig& cfg, const std::string& name, const Value& v, const ConfigSpace& space) {
    return value_equal(value_for(cfg, space.at(name)), v);
}

bool constraint_satisfied(const Constraint& c, const TypedConfig& cfg, const ConfigSpace& space) {
    switch (c.kind) {
        case ConstraintKind::Implies: {
            if (!holds(cfg, c.param, c.equals, space)) return true;
            const Value& actual = value_for(cfg, space.at(c.then_param));
            if (c.then_op == "eq") return value_equal(actual, c.then_value);
            double a = value_as_number(actual);
            double b = value_as_number(c.then_value);
            if (c.then_op == "le") return a <= b;
            if (c.then_op == "ge") return a >= b;
            raise(Errc::SchemaInvalid, "implies: bad op '" + c.then_op + "'");
        }
        case ConstraintKind::LessEqual: {
            double a = value_as_number(value_for(cfg, space.at(c.lhs)));
            double b = value_as_number(value_for(cfg, space.at(c.rhs)));
            return a <= b;
        }
        case ConstraintKind::ForbiddenCombo: {
            for (const auto& [name, val] : c.settings)
                if (!holds(cfg, name, val, space)) return true;
            return false; // every setting matched
        }
    }
    return true;
}

} // namespace

FeasibilityResult check_feasible(const TypedConfig& cfg, const ConfigSpace& space) {
    FeasibilityResult r;
    for (const auto& c : space.constraints)
        if (!constraint_satisfied(c, cfg, space)) r.violated.push_back(c);
    return r;
}

std::string format_double_shortest(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

std::string render_value(const Value& v, const ParameterSpec& spec) {
    switch (spec.kind) {
        case ParamKind::NumericInt: return std::to_string(std::get<std::int64_t>(v));
        case ParamKind::NumericFloat: return format_double_shortest(std::get<double>(v));
        case ParamKind::Categorical: return std::get<std::string>(v);
        case ParamKind::Boolean: return std::get<bool>(v) ? "true" : "false";
    }
    raise(Errc::InvalidArgument, "bad kind");
}

ArtifactBundle materialize(const TypedConfig& cfg, const ConfigSpace& space, const TemplateSet& templates) {
    ArtifactBundle out(templates.begin(), templates.end());
    for (const auto& p : space.params) {
        const std::string placeholder = "{{" + p.target_path + "}}";
        const std::string rendered = render_value(value_for(cfg, p), p);
        int hits = 0;
        for (auto& [fname, text] : out) {
            std::size_t pos = 0;
            while ((pos = text.find(placeholder, pos)) != std::string::npos) {
                ++hits;
                if (hits > 1)
                    raise(Errc::DuplicatePlaceholder, p.name + " -> " + placeholder + " (in " + fname + ")");
                text.replace(pos, placeholder.size(), rendered);
                pos += rendered.size();
            }
        }
        if (hits == 0) raise(Errc::UnresolvedPlaceholder, p.name + " -> " + placeholder);
    }
    return out;
}

std::string bundle_hash(const ArtifactBundle& bundle) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const std::string& s) {
        for (unsigned char ch : s) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
        h ^= 0xff; // separator
        h *= 0x100000001b3ULL;
    };
    for (const auto& [name, text] : bundle) { // std::map: sorted by name
        feed(name);
        feed(text);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

Value value_from_json(const json& j, const ParameterSpec& p, const std::string& ctx) {
    switch (p.kind) {
        case ParamKind::NumericInt:
            if (!j.is_number_integer()) raise(Errc::SchemaInvalid, ctx + ": expected integer");
            return j.get<std::int64_t>();
        case ParamKind::NumericFloat:
            if (!j.is_number()) raise(Errc::SchemaInvalid, ctx + ": expected number");
            return j.get<double>();
        case ParamKind::Categorical:
            if (!j.is_string()) raise(Errc::SchemaInvalid, ctx + ": expected string");
            return j.get<std::string>();
        case ParamKind::Boolean:
            if (!j.is_boolean()) raise(Errc::SchemaInvalid, ctx + ": expected boolean");
            return j.get<bool>();
    }
    raise(Errc::InvalidArgument, "bad kind");
}

// Typed literal for constraint operands: the referenced parameter fixes the type.
Value literal_for_param(const json& j, const ConfigSpace& space, const std::string& name) {
    return value_from_json(j, space.at(name), "constraint operand for " + name);
}

ParamKind kind_from_string(const std::string& s, const std::string& ctx) {
    if (s == "numeric-int") return ParamKind::NumericInt;
    if (s == "numeric-float") return ParamKind::NumericFloat;
    if (s == "categorical") return ParamKind::Categorical;
    if (s == "boolean") return ParamKind::Boolean;
    raise(Errc::SchemaInvalid, ctx + ": unknown kind '" + s + "'");
}

void validate_param(const ParameterSpec& p) {
    const std::string& n = p.name;
    if (n.empty()) raise(Errc::SchemaInvalid, "parameter with empty name");
    switch (p.kind) {
        case ParamKind::NumericInt:
        case ParamKind::NumericFloat: {
            if (!(p.lo < p.hi)) raise(Errc::SchemaInvalid, n + ": requires lo < hi");
            if (p.scale == Scale::Log && !(p.lo > 0)) raise(Errc::SchemaInvalid, n + ": log scale requires lo > 0");
            double d = value_as_number(p.default_value);
            if (d < p.lo || d > p.hi) raise(Errc::SchemaInvalid, n + ": default outside bounds");
            break;
        }
        case ParamKind::Categorical: {
            if (p.choices.size() < 2) raise(Errc::SchemaInvalid, n + ": categorical needs >= 2 choices");
            std::set<std::string> uniq(p.choices.begin(), p.choices.end());
            if (uniq.size() != p.choices.size()) raise(Errc::SchemaInvalid, n + ": duplicate choices");
            const auto& d = std::get<std::string>(p.default_value);
            if (std::find(p.choices.begin(), p.choices.end(), d) == p.choices.end())
                raise(Errc::SchemaInvalid, n + ": default not among choices");
            break;
        }
        case ParamKind::Boolean:
            if (p.default_value.index() != 3) raise(Errc::SchemaInvalid, n + ": default must be boolean");
            break;
    }
}

} // namespace

ConfigSpace parse_space(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        raise(Errc::ParseError, e.what());
    }
    ConfigSpace space;
    space.version = root.value("version", "");
    if (!root.contains("params") || !root["params"].is_array())
        raise(Errc::SchemaInvalid, "missing 'params' array");

    for (const auto& jp : root["params"]) {
        ParameterSpec p;
        p.name = jp.value("name", "");
        p.kind = kind_from_string(jp.value("kind", ""), p.name);
        if (p.kind == ParamKind::NumericInt || p.kind == ParamKind::NumericFloat) {
            if (!jp.contains("lo") || !jp.contains("hi"))
                raise(Errc::SchemaInvalid, p.name + ": numeric kind requires lo and hi");
            p.lo = jp["lo"].get<double>();
            p.hi = jp["hi"].get<double>();
            std::string sc = jp.value("scale", "linear");
            if (sc == "linear") p.scale = Scale::Linear;
            else if (sc == "log") p.scale = Scale::Log;
            else raise(Errc::SchemaInvalid, p.name + ": unknown scale '" + sc + "'");
        }
        if (p.kind == ParamKind::Categorical) {
            if (!jp.contains("choices")) raise(Errc::SchemaInvalid, p.name + ": categorical requires choices");
            p.choices = jp["choices"].get<std::vector<std::string>>();
        }
        if (p.kind == ParamKind::Boolean) p.choices = {"false", "true"};
        if (!jp.contains("default")) raise(Errc::SchemaInvalid, p.name + ": missing default");
        p.default_value = value_from_json(jp["default"], p, p.name + ".default");
        p.target_path = jp.value("target_path", "");
        if (p.target_path.empty()) raise(Errc::SchemaInvalid, p.name + ": missing target_path");
        validate_param(p);
        space.params.push_back(std::move(p));
    }

    std::set<std::string> names;
    for (const auto& p : space.params)
        if (!names.insert(p.name).second) raise(Errc::SchemaInvalid, "duplicate parameter name " + p.name);
    space.rebuild_index();

    if (root.contains("constraints")) {
        for (const auto& jc : root["constraints"]) {
            Constraint c;
            std::string kind = jc.value("kind", "");
            auto require_param = [&](const std::string& name) {
                if (space.index_of(name) < 0)
                    raise(Errc::SchemaInvalid, "constraint references unknown parameter " + name);
            };
            if (kind == "implies") {
                c.kind = ConstraintKind::Implies;
                c.param = jc.at("param").get<std::string>();
                c.then_param = jc.at("then_param").get<std::string>();
                require_param(c.param);
                require_param(c.then_param);
                c.equals = literal_for_param(jc.at("equals"), space, c.param);
                c.then_op = jc.at("then_op").get<std::string>();
                if (c.then_op != "le" && c.then_op != "ge" && c.then_op != "eq")
                    raise(Errc::SchemaInvalid, "implies: bad then_op '" + c.then_op + "'");
                c.then_value = literal_for_param(jc.at("then_value"), space, c.then_param);
            } else if (kind == "less-equal") {
                c.kind = ConstraintKind::LessEqual;
                c.lhs = jc.at("lhs").get<std::string>();
                c.rhs = jc.at("rhs").get<std::string>();
                require_param(c.lhs);
                require_param(c.rhs);
                const auto& lk = space.at(c.lhs).kind;
                const auto& rk = space.at(c.rhs).kind;
                auto numeric = [](ParamKind k) { return k == ParamKind::NumericInt || k == ParamKind::NumericFloat; };
                if (!numeric(lk) || !numeric(rk))
                    raise(Errc::SchemaInvalid, "less-equal requires numeric operands");
            } else if (kind == "forbidden-combo") {
                c.kind = ConstraintKind::ForbiddenCombo;
                const auto& js = jc.at("settings");
                if (!js.is_object() || js.size() < 1)
                    raise(Errc::SchemaInvalid, "forbidden-combo requires settings object");
                for (const auto& [name, val] : js.items()) {
                    require_param(name);
                    c.settings.emplace_back(name, literal_for_param(val, space, name));
                }
            } else {
                raise(Errc::SchemaInvalid, "unknown constraint kind '" + kind + "'");
            }
            space.constraints.push_back(std::move(c));
        }
    }
    return space;
}

ConfigSpace load_space(const std::string& schema_file) {
    std::ifstream in(schema_file);
    if (!in) raise(Errc::IoError, "cannot open schema file " + schema_file);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_space(ss.str());
}

TemplateSet load_templates(const std::string& dir) {
    namespace fs = std::filesystem;
    TemplateSet out;
    if (!fs::is_directory(dir)) raise(Errc::IoError, "template dir not found: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path());
        if (!in) raise(Errc::IoError, "cannot read template " + entry.path().string());
        std::ostringstream ss;
        ss << in.rdbuf();
        out[entry.path().filename().string()] = ss.str();
    }
    if (out.empty()) raise(Errc::IoError, "no template files in " + dir);
    return out;
}

TypedConfig default_config(const ConfigSpace& space) {
    TypedConfig cfg;
    for (const auto& p : space.params) cfg.values[p.name] = p.default_value;
    return cfg;
}

} // namespace tune
