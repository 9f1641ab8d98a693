#include "tune/bench.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tune {

using nlohmann::json;
namespace fs = std::filesystem;

const char* obs_status_name(ObsStatus s) {
    switch (s) {
        case ObsStatus::Ok: return "ok";
        case ObsStatus::DeployFailed: return "deploy_failed";
        case ObsStatus::BenchFailed: return "bench_failed";
        case ObsStatus::Infeasible: return "infeasible";
    }
    return "unknown";
}

ObsStatus obs_status_from_name(const std::string& name) {
    if (name == "ok") return ObsStatus::Ok;
    if (name == "deploy_failed") return ObsStatus::DeployFailed;
    if (name == "bench_failed") return ObsStatus::BenchFailed;
    if (name == "infeasible") return ObsStatus::Infeasible;
    raise(Errc::ParseError, "unknown observation status '" + name + "'");
}

std::vector<SyntheticBump> synthetic_bumps(const SyntheticSpec& spec) {
    std::vector<SyntheticBump> bumps;
    bumps.reserve(spec.effective_dims.size());
    for (std::size_t i = 0; i < spec.effective_dims.size(); ++i) {
        Rng prng(derive_seed(spec.seed, 0xB0B, i));
        SyntheticBump b;
        b.dim = spec.effective_dims[i];
        b.peak = 0.1 + 0.8 * prng.uniform();
        b.width = i < spec.weights.size() ? spec.weights[i] : 0.15 + 0.25 * prng.uniform();
        bumps.push_back(b);
    }
    return bumps;
}

double synthetic_objective(const PointU& x, const SyntheticSpec& spec) {
    double product = 1.0;
    for (const SyntheticBump& b : synthetic_bumps(spec)) {
        if (b.dim < 0 || static_cast<std::size_t>(b.dim) >= x.dim())
            raise(Errc::InvalidArgument, "synthetic_objective: effective dim out of range");
        double t = (x.coords[static_cast<std::size_t>(b.dim)] - b.peak) / b.width;
        product *= 0.5 + 0.5 * std::exp(-t * t);
    }
    return spec.t0 * product;
}

namespace {

// Plausible Caliper-shaped metrics derived deterministically from the
// achieved rate, so zero-noise runs are bitwise reproducible.
void fill_synthetic_metrics(Observation& obs, double tps, const SyntheticSpec& spec) {
    obs.tps_raw = tps;
    obs.send_rate = tps / 0.97;
    std::int64_t submitted = std::llround(obs.send_rate * spec.duration_s);
    obs.tx_success = std::llround(tps * spec.duration_s);
    obs.tx_fail = std::max<std::int64_t>(0, submitted - obs.tx_success);
    double avg = 2000.0 / (1.0 + tps / 50.0);
    obs.latency.avg_ms = avg;
    obs.latency.min_ms = 0.3 * avg;
    obs.latency.max_ms = 4.0 * avg;
    obs.latency.p50_ms = 0.9 * avg;
    obs.latency.p95_ms = 2.2 * avg;
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    out += "'";
    return out;
}

Observation run_external(const PointU&, const ArtifactBundle& bundle, const ExternalSpec& spec,
                         const std::string& work_tag) {
    Observation obs;
    fs::path dir = spec.workdir.empty() ? fs::path(".") : fs::path(spec.workdir);
    if (!work_tag.empty()) dir /= work_tag;

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        obs.status = ObsStatus::DeployFailed;
        obs.note = "cannot create workdir " + dir.string() + ": " + ec.message();
        return obs;
    }
    for (const auto& [name, text] : bundle) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) {
            obs.status = ObsStatus::DeployFailed;
            obs.note = "cannot write artifact " + name;
            return obs;
        }
        out << text;
    }

    long timeout = std::max(1L, std::lround(spec.timeout_s));
    std::string cmd = "cd " + shell_quote(dir.string()) + " && timeout " +
                      std::to_string(timeout) + "s /bin/sh -c " + shell_quote(spec.command);
    int rc = std::system(cmd.c_str());
    int exit_code = -1;
    if (rc != -1 && WIFEXITED(rc)) exit_code = WEXITSTATUS(rc);
    if (exit_code != 0) {
        obs.status = ObsStatus::DeployFailed;
        obs.note = "command exited with status " + std::to_string(exit_code);
        return obs;
    }

    fs::path report = dir / spec.report_path;
    if (!fs::exists(report)) {
        obs.status = ObsStatus::BenchFailed;
        obs.note = "no report at " + report.string();
        return obs;
    }
    try {
        ReportMetrics metrics = parse_report(report.string());
        obs.status = ObsStatus::Ok;
        obs.tps_raw = metrics.tps;
        obs.send_rate = metrics.send_rate;
        obs.latency = metrics.latency;
        obs.tx_success = metrics.succ;
        obs.tx_fail = metrics.fail;
    } catch (const TuneError& e) {
        obs.status = ObsStatus::BenchFailed;
        obs.note = e.what();
    }
    return obs;
}

} // namespace

Observation evaluate(const PointU& x, const ConfigSpace& space, const TemplateSet& templates,
                     const ExecutorSpec& exec, Rng& rng, const std::string& work_tag) {
    auto t0 = std::chrono::steady_clock::now();
    Observation obs;

    TypedConfig cfg = decode(x, space);
    FeasibilityResult feas = check_feasible(cfg, space);
    if (!feas.ok()) {
        obs.status = ObsStatus::Infeasible;
        std::ostringstream note;
        note << "violated: ";
        for (std::size_t i = 0; i < feas.violated.size(); ++i) {
            if (i) note << "; ";
            note << feas.violated[i].describe();
        }
        obs.note = note.str();
        obs.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return obs;
    }

    ArtifactBundle bundle;
    try {
        bundle = materialize(cfg, space, templates);
    } catch (const TuneError& e) {
        obs.status = ObsStatus::DeployFailed;
        obs.note = e.what();
        obs.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return obs;
    }
    obs.config_hash = bundle_hash(bundle);

    if (exec.kind == ExecKind::Synthetic) {
        const SyntheticSpec& spec = exec.synthetic;
        obs.status = ObsStatus::Ok;
        for (const auto& rule : spec.failure_rules) {
            if (rule.dim < 0 || static_cast<std::size_t>(rule.dim) >= x.dim()) continue;
            double v = x.coords[static_cast<std::size_t>(rule.dim)];
            bool fired = rule.op == '<' ? v < rule.threshold : v > rule.threshold;
            if (fired && rng.uniform() < rule.prob) {
                obs.status = ObsStatus::DeployFailed;
                obs.note = "failure rule on dim " + std::to_string(rule.dim);
                break;
            }
        }
        if (obs.status == ObsStatus::Ok) {
            double base = synthetic_objective(x, spec);
            double eps = spec.noise_cv > 0 ? spec.noise_cv * rng.normal_trunc(3.0) : 0.0;
            fill_synthetic_metrics(obs, base * (1.0 + eps), spec);
        }
    } else {
        std::string hash = obs.config_hash;
        obs = run_external(x, bundle, exec.external, work_tag);
        obs.config_hash = hash;
    }

    obs.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return obs;
}

namespace {

double need_number(const json& j, const char* field, const std::string& ctx) {
    if (!j.contains(field) || !j[field].is_number())
        raise(Errc::MalformedReport, ctx + ": missing or non-numeric field '" + field + "'");
    return j[field].get<double>();
}

std::int64_t need_count(const json& j, const char* field, const std::string& ctx) {
    if (!j.contains(field) || !j[field].is_number())
        raise(Errc::MalformedReport, ctx + ": missing or non-numeric field '" + field + "'");
    return j[field].get<std::int64_t>();
}

RoundMetrics parse_round(const json& j, const std::string& ctx) {
    RoundMetrics r;
    r.succ = need_count(j, "succ", ctx);
    r.fail = need_count(j, "fail", ctx);
    r.send_rate = need_number(j, "send_rate", ctx);
    r.tps = need_number(j, "tps", ctx);
    if (!j.contains("latency") || !j["latency"].is_object())
        raise(Errc::MalformedReport, ctx + ": missing 'latency' object");
    const json& lat = j["latency"];
    r.latency.min_ms = need_number(lat, "min", ctx + ".latency");
    r.latency.max_ms = need_number(lat, "max", ctx + ".latency");
    r.latency.avg_ms = need_number(lat, "avg", ctx + ".latency");
    if (lat.contains("p50")) r.latency.p50_ms = lat["p50"].get<double>();
    if (lat.contains("p95")) r.latency.p95_ms = lat["p95"].get<double>();
    return r;
}

} // namespace

ReportMetrics aggregate_rounds(std::vector<RoundMetrics> rounds) {
    if (rounds.empty()) raise(Errc::MalformedReport, "report has no rounds");
    ReportMetrics m;
    double total_tx = 0;
    for (const auto& r : rounds) total_tx += static_cast<double>(r.succ + r.fail);

    double tps = 0, send = 0, avg = 0, p50 = 0, p95 = 0;
    bool have_p50 = true, have_p95 = true;
    m.latency.min_ms = rounds.front().latency.min_ms;
    m.latency.max_ms = rounds.front().latency.max_ms;
    for (const auto& r : rounds) {
        double w = total_tx > 0 ? static_cast<double>(r.succ + r.fail) / total_tx
                                : 1.0 / static_cast<double>(rounds.size());
        tps += w * r.tps;
        send += w * r.send_rate;
        avg += w * r.latency.avg_ms;
        if (r.latency.p50_ms) p50 += w * *r.latency.p50_ms;
        else have_p50 = false;
        if (r.latency.p95_ms) p95 += w * *r.latency.p95_ms;
        else have_p95 = false;
        m.latency.min_ms = std::min(m.latency.min_ms, r.latency.min_ms);
        m.latency.max_ms = std::max(m.latency.max_ms, r.latency.max_ms);
        m.succ += r.succ;
        m.fail += r.fail;
    }
    m.tps = tps;
    m.send_rate = send;
    m.latency.avg_ms = avg;
    if (have_p50) m.latency.p50_ms = p50;
    if (have_p95) m.latency.p95_ms = p95;
    m.rounds = std::move(rounds);
    return m;
}

ReportMetrics parse_report_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        raise(Errc::MalformedReport, std::string("invalid JSON: ") + e.what());
    }

    std::vector<RoundMetrics> rounds;
    if (root.is_object() && root.contains("rounds")) {
        if (!root["rounds"].is_array() || root["rounds"].empty())
            raise(Errc::MalformedReport, "'rounds' must be a non-empty array");
        int i = 0;
        for (const auto& jr : root["rounds"])
            rounds.push_back(parse_round(jr, "rounds[" + std::to_string(i++) + "]"));
    } else if (root.is_object()) {
        rounds.push_back(parse_round(root, "report"));
    } else {
        raise(Errc::MalformedReport, "report root must be an object");
    }
    return aggregate_rounds(std::move(rounds));
}

ReportMetrics parse_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(Errc::MalformedReport, "cannot open report " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_report_text(ss.str());
}

void write_report(const ReportMetrics& metrics, const std::string& path) {
    json rounds = json::array();
    for (const auto& r : metrics.rounds) {
        json lat = {{"min", r.latency.min_ms}, {"max", r.latency.max_ms}, {"avg", r.latency.avg_ms}};
        if (r.latency.p50_ms) lat["p50"] = *r.latency.p50_ms;
        if (r.latency.p95_ms) lat["p95"] = *r.latency.p95_ms;
        rounds.push_back({{"succ", r.succ},
                          {"fail", r.fail},
                          {"send_rate", r.send_rate},
                          {"tps", r.tps},
                          {"latency", lat}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(Errc::IoError, "cannot write report " + path);
    out << json{{"rounds", rounds}}.dump(2) << "\n";
}

ReferenceStats compute_reference(const PointU& x_ref, int k_runs, const ConfigSpace& space,
                                 const TemplateSet& templates, const ExecutorSpec& exec, Rng& rng,
                                 const Observation* first) {
    if (k_runs < 1) raise(Errc::InvalidArgument, "compute_reference: K must be >= 1");
    ReferenceStats stats;
    stats.ref_point = x_ref;
    for (int k = 0; k < k_runs; ++k) {
        Observation obs;
        if (k == 0 && first) obs = *first;
        else obs = evaluate(x_ref, space, templates, exec, rng, "ref-" + std::to_string(k));
        if (!obs.ok())
            raise(Errc::ReferenceFailed, "reference run " + std::to_string(k) + " failed: " +
                                             obs_status_name(obs.status) +
                                             (obs.note.empty() ? "" : " (" + obs.note + ")"));
        stats.runs.push_back(obs.tps_raw);
    }
    double sum = 0;
    for (double v : stats.runs) sum += v;
    stats.ref_mean = sum / static_cast<double>(stats.runs.size());
    double ss = 0;
    for (double v : stats.runs) ss += (v - stats.ref_mean) * (v - stats.ref_mean);
    double sd = stats.runs.size() > 1 ? std::sqrt(ss / static_cast<double>(stats.runs.size() - 1)) : 0.0;
    stats.noise_score = stats.ref_mean > 0 ? sd / stats.ref_mean : 0.0;
    return stats;
}

} // namespace tune
