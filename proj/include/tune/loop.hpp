#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tune/acquisition.hpp"
#include "tune/bench.hpp"
#include "tune/design.hpp"
#include "tune/reduce.hpp"
#include "tune/space.hpp"
#include "tune/surrogate.hpp"

namespace tune {

enum class MethodKind { Bo, Random };

struct MethodSpec {
    std::string name;
    MethodKind kind = MethodKind::Bo;
    AcqSpec acq;
    DrSpec dr;
    std::uint64_t seed = 0;
};

/// The canonical experiment grid: 4 acquisition functions x 4 DR strategies
/// plus the uniform random-search baseline (17 methods). Per-method seeds
/// are derived from the master seed.
std::vector<MethodSpec> canonical_grid(std::uint64_t master_seed, std::size_t active_dim = 20,
                                       std::size_t refresh_every = 10);

struct HistoryRecord {
    int iteration = 0;
    PointU x;
    Observation obs;
    bool embedding_refit = false;
    std::string phase; // "init" or "seq"
};

struct TrialState {
    MethodSpec method;
    std::size_t budget_total = 0;
    std::size_t full_dim = 0;
    std::vector<HistoryRecord> history;
    ReferenceStats ref_stats;
    int incumbent_index = -1; // into history; best ok record
    double incumbent_norm = 0.0;
    DycorsState dycors;
    std::size_t last_train_n = 0; // training rows behind the most recent surrogate
    bool aborted = false;
    std::string abort_reason;
    double wall_clock_s = 0.0;

    std::size_t budget_used() const { return history.size(); }
    const PointU* incumbent_point() const {
        return incumbent_index < 0 ? nullptr : &history[static_cast<std::size_t>(incumbent_index)].x;
    }
};

struct LoopConfig {
    std::size_t budget = 300;
    std::size_t n_init = 30;
    int k_ref = 10;
    bool impute_failures = false; // penalty-impute failed observations into the GP
    std::string log_dir;          // empty -> no logging
    std::string space_path;       // recorded in the log head for resume
    std::string templates_path;
};

/// Append a non-ok observation: budget is consumed, the record is excluded
/// from surrogate training and incumbent updates, DYCORS counts a
/// non-improving step.
void handle_failure(TrialState& state, const PointU& x, const Observation& obs);

/// One full sequential trial: LHS init (counted against the budget),
/// K reference runs of the first configuration (repeats not counted),
/// normalization, then propose-evaluate-update until budget exhaustion.
TrialState run_trial(const MethodSpec& method, const ConfigSpace& space,
                     const TemplateSet& templates, const ExecutorSpec& exec,
                     const LoopConfig& cfg);

/// Rebuild a trial from its log and continue to the budget. With
/// `dry_next_proposal` set, stops before evaluating and returns the next
/// proposal through *next (used to verify log-replay determinism).
TrialState resume_trial(const std::string& log_path, PointU* next = nullptr);

struct ExperimentConfig {
    std::string space_path;
    std::string templates_path;
    std::string out_dir = "runs/out";
    ExecutorSpec executor;
    std::vector<MethodSpec> methods;
    std::size_t budget = 300;
    std::size_t n_init = 30;
    int k_ref = 10;
    std::uint64_t seed = 0;
    std::size_t parallelism = 0; // 0 -> one worker per method
    bool impute_failures = false;
};

ExperimentConfig load_experiment_config(const std::string& path);

/// Run every method's trial, up to `parallelism` concurrently; trials are
/// isolated, failures abort only their own trial, and a manifest is written
/// after all complete.
std::vector<TrialState> run_experiment(const ExperimentConfig& cfg, const ConfigSpace& space,
                                       const TemplateSet& templates);

// Log (de)serialization, shared by the loop, resume, and the report module.
namespace logfmt {
std::string head_line(const MethodSpec& method, const ExecutorSpec& exec, const LoopConfig& cfg,
                      std::size_t full_dim);
std::string reference_line(int k, const Observation& obs);
std::string ref_stats_line(const ReferenceStats& stats);
std::string eval_line(const HistoryRecord& rec, const ConfigSpace& space);
std::string abort_line(const std::string& reason);
} // namespace logfmt

/// A trial log read back from disk (line-delimited JSON records).
struct ParsedTrialLog {
    MethodSpec method;
    ExecutorSpec executor;
    LoopConfig cfg;
    std::size_t full_dim = 0;
    bool has_ref_stats = false;
    ReferenceStats ref_stats;
    std::vector<std::pair<int, double>> reference_runs; // (k, tps_raw)
    std::vector<HistoryRecord> records;
    bool aborted = false;
    std::string abort_reason;
};

ParsedTrialLog load_trial_log(const std::string& path);

} // namespace tune
