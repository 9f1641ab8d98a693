#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tune/rng.hpp"
#include "tune/space.hpp"

namespace tune {

enum class ObsStatus { Ok, DeployFailed, BenchFailed, Infeasible };

const char* obs_status_name(ObsStatus s);
ObsStatus obs_status_from_name(const std::string& name);

struct LatencySummary {
    double min_ms = 0, max_ms = 0, avg_ms = 0;
    std::optional<double> p50_ms, p95_ms;
};

struct Observation {
    ObsStatus status = ObsStatus::Ok;
    double tps_raw = 0;  // achieved rate, tx/s
    double tps_norm = 0; // tps_raw / ref_mean, set once the reference is fixed
    double send_rate = 0;
    LatencySummary latency;
    std::int64_t tx_success = 0;
    std::int64_t tx_fail = 0;
    double wall_clock_s = 0;
    std::string config_hash;
    std::string note; // failure diagnosis (violated constraints, exit status, ...)

    bool ok() const { return status == ObsStatus::Ok; }
};

struct ReferenceStats {
    PointU ref_point;
    std::vector<double> runs; // raw TPS of the K reference runs
    double ref_mean = 0;
    double noise_score = 0; // sample stddev / mean (coefficient of variation)
};

struct FailureRule {
    int dim = 0;
    char op = '<'; // '<' or '>': rule fires when x[dim] op threshold
    double threshold = 0;
    double prob = 1.0; // probability of deploy failure when fired
};

/// Product of seeded unimodal bumps over a small set of effective
/// dimensions; all other coordinates are exactly irrelevant.
struct SyntheticSpec {
    std::vector<int> effective_dims;
    std::vector<double> weights; // per-dim bump widths; empty -> seeded draw
    double noise_cv = 0.02;
    std::vector<FailureRule> failure_rules;
    std::uint64_t seed = 1;
    double t0 = 300.0; // peak throughput, tx/s
    double duration_s = 30.0;
};

struct ExternalSpec {
    std::string workdir;
    std::string command;
    double timeout_s = 600.0;
    std::string report_path = "report.json";
};

enum class ExecKind { Synthetic, External };

struct ExecutorSpec {
    ExecKind kind = ExecKind::Synthetic;
    SyntheticSpec synthetic;
    ExternalSpec external;
};

struct RoundMetrics {
    std::int64_t succ = 0;
    std::int64_t fail = 0;
    double send_rate = 0;
    double tps = 0;
    LatencySummary latency;
};

struct ReportMetrics {
    std::vector<RoundMetrics> rounds;
    // Aggregates: transaction-weighted tps/send_rate/avg latency, summed counts.
    std::int64_t succ = 0;
    std::int64_t fail = 0;
    double send_rate = 0;
    double tps = 0;
    LatencySummary latency;
};

/// Decode, check feasibility, materialize, execute, parse. Failures never
/// throw; they come back as Observation statuses.
Observation evaluate(const PointU& x, const ConfigSpace& space, const TemplateSet& templates,
                     const ExecutorSpec& exec, Rng& rng, const std::string& work_tag = "");

/// Noise-free synthetic throughput at x (the executor adds the
/// multiplicative noise drawn from the caller's generator).
double synthetic_objective(const PointU& x, const SyntheticSpec& spec);

struct SyntheticBump {
    int dim = 0;
    double peak = 0.5;
    double width = 0.25;
};

/// The seeded bump parameters behind synthetic_objective, in
/// effective_dims order.
std::vector<SyntheticBump> synthetic_bumps(const SyntheticSpec& spec);

ReportMetrics parse_report(const std::string& path);
ReportMetrics parse_report_text(const std::string& text);
void write_report(const ReportMetrics& metrics, const std::string& path);
ReportMetrics aggregate_rounds(std::vector<RoundMetrics> rounds);

/// Evaluate x_ref K times (reusing `first` as run 1 when provided) and form
/// the normalization stats. Any non-ok run raises ReferenceFailed.
ReferenceStats compute_reference(const PointU& x_ref, int k_runs, const ConfigSpace& space,
                                 const TemplateSet& templates, const ExecutorSpec& exec, Rng& rng,
                                 const Observation* first = nullptr);

} // namespace tune
