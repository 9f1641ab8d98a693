#pragma once

#include <array>
#include <string>
#include <vector>

#include "tune/loop.hpp"

namespace tune {

struct TrialSummary {
    std::string method;
    std::string af; // empty for the random baseline
    std::string dr;
    bool is_random = false;
    bool embedded_or_random = false; // REMBO or random: excluded from the
                                     // default norm-diff plot
    bool has_valid = false;          // at least one ok record
    double improvement_factor = 0.0;
    double best_tps_raw = 0.0;
    double noise_score = 0.0;
    int n_failures = 0;
    std::vector<double> norm_diff_trace;
};

/// Best normalized throughput over the trial's ok records.
double improvement_factor(const ParsedTrialLog& log);

/// Euclidean norms of successive proposal steps (all statuses), averaged in
/// non-overlapping batches; the final partial batch averages its own length.
std::vector<double> norm_diff_trace(const ParsedTrialLog& log, int batch);

TrialSummary summarize(const ParsedTrialLog& log, int batch = 10);

/// Improvement-factor grid with acquisition rows {EI, MPI, UCB, DYCORS} and
/// DR columns {PCA, REMBO, SA, SHAP}, plus the random baseline. Missing
/// trials stay absent, never zero.
struct Heatmap {
    static constexpr std::array<const char*, 4> kAfOrder = {"EI", "MPI", "UCB", "DYCORS"};
    static constexpr std::array<const char*, 4> kDrOrder = {"PCA", "REMBO", "SA", "SHAP"};
    std::array<std::array<double, 4>, 4> value{};
    std::array<std::array<bool, 4>, 4> present{};
    double baseline = 0.0;
    bool baseline_present = false;
};

Heatmap build_heatmap(const std::vector<TrialSummary>& summaries);

/// Load every trial-*.jsonl under `logs_dir`, sorted by filename.
std::vector<TrialSummary> summarize_dir(const std::string& logs_dir, int batch = 10);

/// Write summary.csv, heatmap.csv, best_values.csv, noise.csv,
/// normdiffs.csv and the corresponding SVG charts. Byte-deterministic for
/// identical inputs.
void emit(const std::vector<TrialSummary>& summaries, const std::string& out_dir,
          bool include_embedded = false);

} // namespace tune
