#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "tune/loop.hpp"
#include "tune/report.hpp"

namespace {

int cmd_run(const std::string& config_path, std::size_t parallelism, const std::string& out) {
    tune::ExperimentConfig cfg = tune::load_experiment_config(config_path);
    if (parallelism > 0) cfg.parallelism = parallelism;
    if (!out.empty()) cfg.out_dir = out;

    tune::ConfigSpace space = tune::load_space(cfg.space_path);
    tune::TemplateSet templates = tune::load_templates(cfg.templates_path);

    std::printf("space: %zu parameters, %zu constraints\n", space.dim(), space.constraints.size());
    std::printf("methods: %zu, budget %zu (n_init %zu, K %d)\n", cfg.methods.size(), cfg.budget,
                cfg.n_init, cfg.k_ref);

    auto results = tune::run_experiment(cfg, space, templates);

    int aborted = 0;
    for (const auto& st : results) {
        if (st.aborted) {
            ++aborted;
            std::printf("%-14s ABORTED  %s\n", st.method.name.c_str(), st.abort_reason.c_str());
        } else {
            std::printf("%-14s best norm %.4f  best tps %.2f  noise %.4f  (%.1fs)\n",
                        st.method.name.c_str(), st.incumbent_norm,
                        st.incumbent_index >= 0
                            ? st.history[static_cast<std::size_t>(st.incumbent_index)].obs.tps_raw
                            : 0.0,
                        st.ref_stats.noise_score, st.wall_clock_s);
        }
    }
    std::printf("logs and manifest written to %s\n", cfg.out_dir.c_str());
    return aborted == static_cast<int>(results.size()) ? 1 : 0;
}

int cmd_resume(const std::string& trial_log) {
    tune::TrialState st = tune::resume_trial(trial_log);
    std::printf("%s: %zu/%zu evaluations, best norm %.4f\n", st.method.name.c_str(),
                st.budget_used(), st.budget_total, st.incumbent_norm);
    return 0;
}

int cmd_report(const std::string& logs, const std::string& out, int batch, bool include_embedded) {
    auto summaries = tune::summarize_dir(logs, batch);
    tune::emit(summaries, out, include_embedded);
    std::printf("%zu trials summarized; tables and charts written to %s\n", summaries.size(),
                out.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Closed-loop black-box configuration tuner"};
    app.require_subcommand(1);

    std::string config_path, out_dir, trial_log, logs_dir;
    std::size_t parallelism = 0;
    int batch = 10;
    bool include_embedded = false;

    auto* run = app.add_subcommand("run", "Run a tuning experiment from a config file");
    run->add_option("--config", config_path, "experiment config (JSON)")->required();
    run->add_option("--parallelism", parallelism, "worker count (default: one per method)");
    run->add_option("--out", out_dir, "output directory override");

    auto* resume = app.add_subcommand("resume", "Replay a trial log and continue to the budget");
    resume->add_option("--trial", trial_log, "trial-*.jsonl log file")->required();

    auto* report = app.add_subcommand("report", "Summarize trial logs into CSV tables and SVG charts");
    report->add_option("--logs", logs_dir, "directory with trial-*.jsonl logs")->required();
    report->add_option("--out", out_dir, "output directory")->required();
    report->add_option("--batch", batch, "norm-diff batch size (default 10)");
    report->add_flag("--include-embedded", include_embedded,
                     "include REMBO and random trials in the norm-diff chart");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, parallelism, out_dir);
        if (resume->parsed()) return cmd_resume(trial_log);
        if (report->parsed()) return cmd_report(logs_dir, out_dir, batch, include_embedded);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
