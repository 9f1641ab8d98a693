#include "tune/loop.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace tune {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string iso_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json acq_to_json(const AcqSpec& acq) {
    return json{{"kind", acq_kind_name(acq.kind)},
                {"xi", acq.xi},
                {"kappa", acq.kappa},
                {"dycors",
                 {{"p_init", acq.dycors.p_init},
                  {"sigma_init", acq.dycors.sigma_init},
                  {"sigma_min", acq.dycors.sigma_min},
                  {"n_cand", acq.dycors.n_cand},
                  {"fail_tol", acq.dycors.fail_tol},
                  {"success_tol", acq.dycors.success_tol}}}};
}

AcqSpec acq_from_json(const json& j) {
    AcqSpec acq = default_acq(acq_kind_from_name(j.at("kind").get<std::string>()), 20);
    acq.xi = j.value("xi", acq.xi);
    acq.kappa = j.value("kappa", acq.kappa);
    if (j.contains("dycors")) {
        const json& d = j["dycors"];
        acq.dycors.p_init = d.value("p_init", acq.dycors.p_init);
        acq.dycors.sigma_init = d.value("sigma_init", acq.dycors.sigma_init);
        acq.dycors.sigma_min = d.value("sigma_min", acq.dycors.sigma_min);
        acq.dycors.n_cand = d.value("n_cand", acq.dycors.n_cand);
        acq.dycors.fail_tol = d.value("fail_tol", acq.dycors.fail_tol);
        acq.dycors.success_tol = d.value("success_tol", acq.dycors.success_tol);
    }
    return acq;
}

json dr_to_json(const DrSpec& dr) {
    return json{{"kind", dr_kind_name(dr.kind)},
                {"m", dr.m},
                {"refresh_every", dr.refresh_every},
                {"seed", dr.seed}};
}

DrSpec dr_from_json(const json& j) {
    DrSpec dr;
    dr.kind = dr_kind_from_name(j.at("kind").get<std::string>());
    dr.m = j.value("m", dr.m);
    dr.refresh_every = j.value("refresh_every", dr.refresh_every);
    dr.seed = j.value("seed", dr.seed);
    return dr;
}

json method_to_json(const MethodSpec& m) {
    json j{{"name", m.name},
           {"kind", m.kind == MethodKind::Bo ? "bo" : "random"},
           {"seed", m.seed}};
    if (m.kind == MethodKind::Bo) {
        j["acq"] = acq_to_json(m.acq);
        j["dr"] = dr_to_json(m.dr);
    }
    return j;
}

MethodSpec method_from_json(const json& j) {
    MethodSpec m;
    m.name = j.at("name").get<std::string>();
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "bo") m.kind = MethodKind::Bo;
    else if (kind == "random") m.kind = MethodKind::Random;
    else raise(Errc::ParseError, "unknown method kind '" + kind + "'");
    m.seed = j.at("seed").get<std::uint64_t>();
    if (m.kind == MethodKind::Bo) {
        m.acq = acq_from_json(j.at("acq"));
        m.dr = dr_from_json(j.at("dr"));
    }
    return m;
}

json executor_to_json(const ExecutorSpec& e) {
    if (e.kind == ExecKind::Synthetic) {
        json rules = json::array();
        for (const auto& r : e.synthetic.failure_rules)
            rules.push_back({{"dim", r.dim},
                             {"op", std::string(1, r.op)},
                             {"threshold", r.threshold},
                             {"prob", r.prob}});
        return json{{"kind", "synthetic"},
                    {"synthetic",
                     {{"effective_dims", e.synthetic.effective_dims},
                      {"weights", e.synthetic.weights},
                      {"noise_cv", e.synthetic.noise_cv},
                      {"failure_rules", rules},
                      {"seed", e.synthetic.seed},
                      {"t0", e.synthetic.t0},
                      {"duration_s", e.synthetic.duration_s}}}};
    }
    return json{{"kind", "external"},
                {"external",
                 {{"workdir", e.external.workdir},
                  {"command", e.external.command},
                  {"timeout_s", e.external.timeout_s},
                  {"report_path", e.external.report_path}}}};
}

ExecutorSpec executor_from_json(const json& j) {
    ExecutorSpec e;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "synthetic") {
        e.kind = ExecKind::Synthetic;
        const json& s = j.at("synthetic");
        e.synthetic.effective_dims = s.value("effective_dims", std::vector<int>{});
        e.synthetic.weights = s.value("weights", std::vector<double>{});
        e.synthetic.noise_cv = s.value("noise_cv", 0.02);
        e.synthetic.seed = s.value("seed", std::uint64_t{1});
        e.synthetic.t0 = s.value("t0", 300.0);
        e.synthetic.duration_s = s.value("duration_s", 30.0);
        if (s.contains("failure_rules")) {
            for (const auto& jr : s["failure_rules"]) {
                FailureRule r;
                r.dim = jr.at("dim").get<int>();
                std::string op = jr.value("op", "<");
                if (op != "<" && op != ">") raise(Errc::ParseError, "failure rule op must be '<' or '>'");
                r.op = op[0];
                r.threshold = jr.at("threshold").get<double>();
                r.prob = jr.value("prob", 1.0);
                e.synthetic.failure_rules.push_back(r);
            }
        }
    } else if (kind == "external") {
        e.kind = ExecKind::External;
        const json& x = j.at("external");
        e.external.workdir = x.value("workdir", std::string{});
        e.external.command = x.at("command").get<std::string>();
        e.external.timeout_s = x.value("timeout_s", 600.0);
        e.external.report_path = x.value("report_path", std::string{"report.json"});
    } else {
        raise(Errc::ParseError, "unknown executor kind '" + kind + "'");
    }
    return e;
}

json latency_to_json(const LatencySummary& lat) {
    json j{{"min", lat.min_ms}, {"max", lat.max_ms}, {"avg", lat.avg_ms}};
    if (lat.p50_ms) j["p50"] = *lat.p50_ms;
    if (lat.p95_ms) j["p95"] = *lat.p95_ms;
    return j;
}

LatencySummary latency_from_json(const json& j) {
    LatencySummary lat;
    lat.min_ms = j.value("min", 0.0);
    lat.max_ms = j.value("max", 0.0);
    lat.avg_ms = j.value("avg", 0.0);
    if (j.contains("p50")) lat.p50_ms = j["p50"].get<double>();
    if (j.contains("p95")) lat.p95_ms = j["p95"].get<double>();
    return lat;
}

json config_to_json(const TypedConfig& cfg) {
    json j = json::object();
    for (const auto& [name, v] : cfg.values) {
        switch (v.index()) {
            case 0: j[name] = std::get<std::int64_t>(v); break;
            case 1: j[name] = std::get<double>(v); break;
            case 2: j[name] = std::get<std::string>(v); break;
            default: j[name] = std::get<bool>(v); break;
        }
    }
    return j;
}

} // namespace

namespace logfmt {

std::string head_line(const MethodSpec& method, const ExecutorSpec& exec, const LoopConfig& cfg,
                      std::size_t full_dim) {
    json j{{"type", "head"},
           {"trial", method.name},
           {"method", method_to_json(method)},
           {"executor", executor_to_json(exec)},
           {"budget", cfg.budget},
           {"n_init", cfg.n_init},
           {"k_ref", cfg.k_ref},
           {"impute_failures", cfg.impute_failures},
           {"d", full_dim},
           {"space", cfg.space_path},
           {"templates", cfg.templates_path},
           {"started", iso_now()}};
    return j.dump();
}

std::string reference_line(int k, const Observation& obs) {
    return json{{"type", "reference"},
                {"k", k},
                {"status", obs_status_name(obs.status)},
                {"tps_raw", obs.tps_raw}}
        .dump();
}

std::string ref_stats_line(const ReferenceStats& stats) {
    return json{{"type", "ref_stats"},
                {"ref_mean", stats.ref_mean},
                {"noise_score", stats.noise_score},
                {"runs", stats.runs}}
        .dump();
}

std::string eval_line(const HistoryRecord& rec, const ConfigSpace& space) {
    json j{{"type", "eval"},
           {"iteration", rec.iteration},
           {"phase", rec.phase},
           {"x", rec.x.coords},
           {"config", config_to_json(decode(rec.x, space))},
           {"config_hash", rec.obs.config_hash},
           {"status", obs_status_name(rec.obs.status)},
           {"tps_raw", rec.obs.tps_raw},
           {"tps_norm", rec.obs.tps_norm},
           {"send_rate", rec.obs.send_rate},
           {"latency", latency_to_json(rec.obs.latency)},
           {"tx_success", rec.obs.tx_success},
           {"tx_fail", rec.obs.tx_fail},
           {"wall_clock_s", rec.obs.wall_clock_s},
           {"embedding_refit", rec.embedding_refit},
           {"ts", iso_now()}};
    if (!rec.obs.note.empty()) j["note"] = rec.obs.note;
    return j.dump();
}

std::string abort_line(const std::string& reason) {
    return json{{"type", "abort"}, {"reason", reason}, {"ts", iso_now()}}.dump();
}

} // namespace logfmt

ParsedTrialLog load_trial_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(Errc::IoError, "cannot open trial log " + path);
    ParsedTrialLog log;
    std::string line;
    bool have_head = false;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            raise(Errc::ParseError, path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        std::string type = j.value("type", "");
        if (type == "head") {
            log.method = method_from_json(j.at("method"));
            log.executor = executor_from_json(j.at("executor"));
            log.cfg.budget = j.at("budget").get<std::size_t>();
            log.cfg.n_init = j.at("n_init").get<std::size_t>();
            log.cfg.k_ref = j.at("k_ref").get<int>();
            log.cfg.impute_failures = j.value("impute_failures", false);
            log.cfg.space_path = j.value("space", "");
            log.cfg.templates_path = j.value("templates", "");
            log.full_dim = j.at("d").get<std::size_t>();
            have_head = true;
        } else if (type == "reference") {
            log.reference_runs.emplace_back(j.at("k").get<int>(), j.at("tps_raw").get<double>());
        } else if (type == "ref_stats") {
            log.has_ref_stats = true;
            log.ref_stats.ref_mean = j.at("ref_mean").get<double>();
            log.ref_stats.noise_score = j.at("noise_score").get<double>();
            log.ref_stats.runs = j.at("runs").get<std::vector<double>>();
        } else if (type == "eval") {
            HistoryRecord rec;
            rec.iteration = j.at("iteration").get<int>();
            rec.phase = j.value("phase", "");
            rec.x.coords = j.at("x").get<std::vector<double>>();
            rec.embedding_refit = j.value("embedding_refit", false);
            rec.obs.status = obs_status_from_name(j.at("status").get<std::string>());
            rec.obs.tps_raw = j.value("tps_raw", 0.0);
            rec.obs.tps_norm = j.value("tps_norm", 0.0);
            rec.obs.send_rate = j.value("send_rate", 0.0);
            if (j.contains("latency")) rec.obs.latency = latency_from_json(j["latency"]);
            rec.obs.tx_success = j.value("tx_success", std::int64_t{0});
            rec.obs.tx_fail = j.value("tx_fail", std::int64_t{0});
            rec.obs.wall_clock_s = j.value("wall_clock_s", 0.0);
            rec.obs.config_hash = j.value("config_hash", "");
            rec.obs.note = j.value("note", "");
            log.records.push_back(std::move(rec));
        } else if (type == "abort") {
            log.aborted = true;
            log.abort_reason = j.value("reason", "");
        }
    }
    if (!have_head) raise(Errc::ParseError, path + ": missing head record");
    return log;
}

std::vector<MethodSpec> canonical_grid(std::uint64_t master_seed, std::size_t active_dim,
                                       std::size_t refresh_every) {
    static constexpr AcqKind kAcqs[4] = {AcqKind::Ei, AcqKind::Mpi, AcqKind::Ucb, AcqKind::Dycors};
    static constexpr DrKind kDrs[4] = {DrKind::Pca, DrKind::Rembo, DrKind::Sa, DrKind::Shap};
    std::vector<MethodSpec> methods;
    std::size_t idx = 0;
    for (AcqKind a : kAcqs) {
        for (DrKind d : kDrs) {
            MethodSpec m;
            m.name = std::string(acq_kind_name(a)) + "-" + dr_kind_name(d);
            m.kind = MethodKind::Bo;
            m.acq = default_acq(a, active_dim);
            m.dr.kind = d;
            m.dr.m = active_dim;
            m.dr.refresh_every = refresh_every;
            m.seed = derive_seed(master_seed, stream::kMethod, idx++);
            methods.push_back(std::move(m));
        }
    }
    MethodSpec rnd;
    rnd.name = "random";
    rnd.kind = MethodKind::Random;
    rnd.seed = derive_seed(master_seed, stream::kMethod, idx);
    methods.push_back(std::move(rnd));
    return methods;
}

namespace {

// Sequential trial driver. The surrogate/embedding refresh decisions are
// pure functions of (seed, history), which is what makes resume-from-log
// reproduce the exact next proposal.
class TrialRunner {
public:
    TrialRunner(const MethodSpec& method, const ConfigSpace& space, const TemplateSet& templates,
                const ExecutorSpec& exec, const LoopConfig& cfg, std::ofstream* log)
        : space_(space), templates_(templates), exec_(exec), cfg_(cfg), log_(log) {
        state_.method = method;
        state_.budget_total = cfg.budget;
        state_.full_dim = space.dim();
        state_.dycors.sigma = method.acq.dycors.sigma_init;
    }

    TrialState& state() { return state_; }

    void log_line(const std::string& line) {
        if (log_) *log_ << line << "\n" << std::flush;
    }

    void run_from_start() {
        if (cfg_.budget < cfg_.n_init + 1)
            raise(Errc::InvalidArgument, "budget must exceed n_init");
        if (cfg_.n_init < 1) raise(Errc::InvalidArgument, "n_init must be >= 1");
        log_line(logfmt::head_line(state_.method, exec_, cfg_, state_.full_dim));
        init_phase();
        if (state_.aborted) return;
        sequential_phase();
    }

    // Restore state from a parsed log, then continue. When `next` is given,
    // compute the next proposal and stop without evaluating.
    void resume(const ParsedTrialLog& log, PointU* next) {
        state_.ref_stats = log.ref_stats;
        for (const auto& rec : log.records) apply_record(rec);
        if (state_.budget_used() < cfg_.n_init) {
            if (next) {
                auto design = make_design();
                *next = design[state_.budget_used()];
                return;
            }
            init_phase(state_.budget_used());
            if (state_.aborted) return;
            sequential_phase();
            return;
        }
        rebuild_model_state();
        if (next) {
            std::size_t t = state_.budget_used();
            if (t >= cfg_.budget) raise(Errc::InvalidArgument, "trial already complete");
            *next = propose(t);
            return;
        }
        sequential_phase();
    }

private:
    std::vector<PointU> make_design() const {
        DesignSpec d;
        d.n_init = cfg_.n_init;
        d.d = state_.full_dim;
        d.seed = derive_seed(state_.method.seed, stream::kLhs);
        return lhs(d);
    }

    Observation evaluate_at(const PointU& x, std::size_t t) {
        Rng rng(derive_seed(state_.method.seed, stream::kEval, t));
        return evaluate(x, space_, templates_, exec_, rng,
                        state_.method.name + "/iter-" + std::to_string(t));
    }

    void init_phase(std::size_t resume_from = 0) {
        auto design = make_design();
        for (std::size_t i = resume_from; i < design.size(); ++i) {
            Observation obs = evaluate_at(design[i], i);
            if (i == 0) {
                if (!establish_reference(design[0], obs)) return;
                continue;
            }
            if (obs.ok()) obs.tps_norm = obs.tps_raw / state_.ref_stats.ref_mean;
            commit(design[i], obs, false, "init");
        }
    }

    // The trial's first evaluation is the reference configuration; its K
    // runs fix the normalization, and its history record carries the mean
    // (normalized value exactly 1).
    bool establish_reference(const PointU& x_ref, const Observation& first) {
        log_line(logfmt::reference_line(0, first));
        ReferenceStats stats;
        try {
            Rng rng(derive_seed(state_.method.seed, stream::kRefRepeat));
            stats = compute_reference_logged(x_ref, first, rng);
        } catch (const TuneError& e) {
            state_.aborted = true;
            state_.abort_reason = e.what();
            log_line(logfmt::abort_line(state_.abort_reason));
            return false;
        }
        state_.ref_stats = stats;
        log_line(logfmt::ref_stats_line(stats));

        Observation ref_obs = first;
        ref_obs.tps_raw = stats.ref_mean;
        ref_obs.tps_norm = 1.0;
        commit(x_ref, ref_obs, false, "init");
        return true;
    }

    ReferenceStats compute_reference_logged(const PointU& x_ref, const Observation& first,
                                            Rng& rng) {
        if (!first.ok())
            raise(Errc::ReferenceFailed,
                  std::string("reference run 0 failed: ") + obs_status_name(first.status) +
                      (first.note.empty() ? "" : " (" + first.note + ")"));
        ReferenceStats stats;
        stats.ref_point = x_ref;
        stats.runs.push_back(first.tps_raw);
        for (int k = 1; k < cfg_.k_ref; ++k) {
            Observation obs = evaluate(x_ref, space_, templates_, exec_, rng,
                                       state_.method.name + "/ref-" + std::to_string(k));
            log_line(logfmt::reference_line(k, obs));
            if (!obs.ok())
                raise(Errc::ReferenceFailed,
                      "reference run " + std::to_string(k) + " failed: " +
                          obs_status_name(obs.status) +
                          (obs.note.empty() ? "" : " (" + obs.note + ")"));
            stats.runs.push_back(obs.tps_raw);
        }
        double sum = 0;
        for (double v : stats.runs) sum += v;
        stats.ref_mean = sum / static_cast<double>(stats.runs.size());
        double ss = 0;
        for (double v : stats.runs) ss += (v - stats.ref_mean) * (v - stats.ref_mean);
        double sd = stats.runs.size() > 1
                        ? std::sqrt(ss / static_cast<double>(stats.runs.size() - 1))
                        : 0.0;
        stats.noise_score = stats.ref_mean > 0 ? sd / stats.ref_mean : 0.0;
        return stats;
    }

    void sequential_phase() {
        for (std::size_t t = state_.budget_used(); t < cfg_.budget; ++t) {
            PointU x = propose(t);
            Observation obs = evaluate_at(x, t);
            if (obs.ok()) obs.tps_norm = obs.tps_raw / state_.ref_stats.ref_mean;
            commit(x, obs, refit_happened_, "seq");
        }
    }

    // ---- model state -----------------------------------------------------

    std::size_t ok_count(std::size_t upto) const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < upto; ++i)
            if (state_.history[i].obs.ok()) ++n;
        return n;
    }

    std::size_t train_count(std::size_t upto) const {
        return cfg_.impute_failures ? upto : ok_count(upto);
    }

    // Training matrix in the embedding's unit-box coordinates.
    void training_data(std::size_t upto, Eigen::MatrixXd& X, Eigen::VectorXd& y) const {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < upto; ++i)
            if (state_.history[i].obs.ok() || cfg_.impute_failures) rows.push_back(i);
        const auto m = static_cast<Eigen::Index>(emb_.active_dim());
        X.resize(static_cast<Eigen::Index>(rows.size()), m);
        y.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto& rec = state_.history[rows[r]];
            X.row(static_cast<Eigen::Index>(r)) =
                unit_from_active(emb_, to_active(emb_, rec.x)).transpose();
            y[static_cast<Eigen::Index>(r)] = rec.obs.ok() ? rec.obs.tps_norm : 0.0;
        }
    }

    bool refit_embedding(std::size_t t) {
        const DrSpec& dr = state_.method.dr;
        switch (dr.kind) {
            case DrKind::Pca: {
                if (t < 2) return false;
                Eigen::MatrixXd X(static_cast<Eigen::Index>(t),
                                  static_cast<Eigen::Index>(state_.full_dim));
                for (std::size_t i = 0; i < t; ++i)
                    X.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(
                        state_.history[i].x.coords.data(),
                        static_cast<Eigen::Index>(state_.full_dim));
                emb_ = fit_pca(X, dr.m, derive_seed(state_.method.seed, stream::kEmbed, t));
                has_emb_ = true;
                return true;
            }
            case DrKind::Rembo: {
                if (!has_emb_) { // fixed for the whole trial
                    emb_ = make_rembo(state_.full_dim, dr.m,
                                      derive_seed(state_.method.seed, stream::kEmbed));
                    has_emb_ = true;
                }
                return true;
            }
            case DrKind::Sa:
            case DrKind::Shap: {
                std::vector<std::size_t> ok_rows;
                for (std::size_t i = 0; i < t; ++i)
                    if (state_.history[i].obs.ok()) ok_rows.push_back(i);
                if (ok_rows.size() < 10) return false;
                Eigen::MatrixXd X(static_cast<Eigen::Index>(ok_rows.size()),
                                  static_cast<Eigen::Index>(state_.full_dim));
                Eigen::VectorXd y(static_cast<Eigen::Index>(ok_rows.size()));
                for (std::size_t r = 0; r < ok_rows.size(); ++r) {
                    X.row(static_cast<Eigen::Index>(r)) = Eigen::Map<const Eigen::VectorXd>(
                        state_.history[ok_rows[r]].x.coords.data(),
                        static_cast<Eigen::Index>(state_.full_dim));
                    y[static_cast<Eigen::Index>(r)] = state_.history[ok_rows[r]].obs.tps_norm;
                }
                std::vector<int> subset =
                    dr.kind == DrKind::Sa
                        ? rank_sensitivity(X, y, dr.m)
                        : rank_attribution(X, y, dr.m,
                                           derive_seed(state_.method.seed, stream::kEmbed, t));
                emb_ = make_subset(dr.kind, std::move(subset), state_.full_dim,
                                   *state_.incumbent_point());
                has_emb_ = true;
                return true;
            }
            case DrKind::None:
                if (!has_emb_) {
                    emb_ = identity_embedding(state_.full_dim);
                    has_emb_ = true;
                }
                return true;
        }
        return false;
    }

    // Refresh-or-rebuild for iteration t; returns whether a model is usable.
    bool advance_model(std::size_t t) {
        refit_happened_ = false;
        const std::size_t t_seq = t - cfg_.n_init;
        bool boundary = (t_seq % state_.method.dr.refresh_every) == 0;
        bool attempt = boundary || !model_ready_;
        if (attempt) {
            bool ok = false;
            try {
                ok = refit_embedding(t) && train_count(t) >= 2;
            } catch (const TuneError&) {
                ok = false; // degenerate numerics: fall back, retry next iteration
            }
            if (ok) {
                Eigen::MatrixXd X;
                Eigen::VectorXd y;
                training_data(t, X, y);
                try {
                    model_ = fit(X, y, derive_seed(state_.method.seed, stream::kFit, t));
                    hyper_ = model_.hyper;
                    has_hyper_ = true;
                    model_ready_ = true;
                    refit_happened_ = true;
                    state_.last_train_n = static_cast<std::size_t>(X.rows());
                } catch (const TuneError&) {
                    model_ready_ = false;
                }
            }
            // on failure keep any previous embedding/hypers and retry later
        }
        if (!model_ready_) return false;
        if (!refit_happened_) {
            // data grew since the last full fit: recondition under cached
            // hyperparameters (mean re-centered on the current targets)
            Eigen::MatrixXd X;
            Eigen::VectorXd y;
            training_data(t, X, y);
            if (X.rows() < 1) return false;
            GpHyperparams h = hyper_;
            h.mean_const = y.mean();
            try {
                model_ = make_model(h, X, y);
                state_.last_train_n = static_cast<std::size_t>(X.rows());
            } catch (const TuneError&) {
                model_ready_ = false;
                return false;
            }
        }
        return true;
    }

    PointU propose(std::size_t t) {
        Rng prop(derive_seed(state_.method.seed, stream::kPropose, t));
        if (state_.method.kind == MethodKind::Random)
            return uniform_propose(prop, state_.full_dim);

        if (!advance_model(t)) return uniform_propose(prop, state_.full_dim);

        if (emb_.kind == DrKind::Sa || emb_.kind == DrKind::Shap)
            emb_.anchor = *state_.incumbent_point();

        const std::size_t t_seq = t - cfg_.n_init;
        Box unit = Box::unit(static_cast<Eigen::Index>(emb_.active_dim()));
        Eigen::VectorXd u;
        if (state_.method.acq.kind == AcqKind::Dycors) {
            Eigen::VectorXd inc_u =
                unit_from_active(emb_, to_active(emb_, *state_.incumbent_point()));
            u = propose_dycors(model_, state_.method.acq.dycors, inc_u, unit, prop, t_seq,
                               cfg_.budget, state_.dycors.sigma);
        } else {
            u = propose_surrogate(model_, state_.method.acq, unit, prop);
        }
        return to_full(emb_, active_from_unit(emb_, u));
    }

    // ---- history ----------------------------------------------------------

    void apply_record(const HistoryRecord& rec) {
        bool improved = rec.obs.ok() && rec.obs.tps_norm > state_.incumbent_norm;
        if (improved) {
            state_.incumbent_norm = rec.obs.tps_norm;
            state_.incumbent_index = static_cast<int>(state_.history.size());
        }
        state_.history.push_back(rec);
        if (state_.method.kind == MethodKind::Bo &&
            state_.method.acq.kind == AcqKind::Dycors && rec.phase == "seq")
            dycors_update(state_.dycors, improved, state_.method.acq.dycors);
    }

    void commit(const PointU& x, const Observation& obs, bool refit, const char* phase) {
        HistoryRecord rec;
        rec.iteration = static_cast<int>(state_.budget_used());
        rec.x = x;
        rec.obs = obs;
        rec.embedding_refit = refit;
        rec.phase = phase;
        log_line(logfmt::eval_line(rec, space_));
        apply_record(rec);
    }

    // Rebuild embedding/hyperparameter caches after loading a log: find the
    // last iteration whose refresh attempt succeeded and redo that fit from
    // the history prefix. Success is decidable from record statuses alone.
    void rebuild_model_state() {
        if (state_.method.kind == MethodKind::Random) return;
        const DrSpec& dr = state_.method.dr;
        auto emb_possible = [&](std::size_t t) {
            switch (dr.kind) {
                case DrKind::Pca: return t >= 2;
                case DrKind::Sa:
                case DrKind::Shap: return ok_count(t) >= 10;
                default: return true;
            }
        };
        bool ready = false;
        std::ptrdiff_t last_success = -1;
        for (std::size_t t = cfg_.n_init; t < state_.budget_used(); ++t) {
            bool boundary = ((t - cfg_.n_init) % dr.refresh_every) == 0;
            if (!boundary && ready) continue;
            if (emb_possible(t) && train_count(t) >= 2) {
                ready = true;
                last_success = static_cast<std::ptrdiff_t>(t);
            }
        }
        if (last_success < 0) return;
        auto t = static_cast<std::size_t>(last_success);
        if (!refit_embedding(t)) return;
        Eigen::MatrixXd X;
        Eigen::VectorXd y;
        training_data(t, X, y);
        try {
            model_ = fit(X, y, derive_seed(state_.method.seed, stream::kFit, t));
            hyper_ = model_.hyper;
            has_hyper_ = true;
            model_ready_ = true;
        } catch (const TuneError&) {
            model_ready_ = false;
        }
    }

    const ConfigSpace& space_;
    const TemplateSet& templates_;
    const ExecutorSpec& exec_;
    LoopConfig cfg_;
    std::ofstream* log_ = nullptr;

    TrialState state_;
    Embedding emb_;
    bool has_emb_ = false;
    GpHyperparams hyper_;
    bool has_hyper_ = false;
    bool model_ready_ = false;
    bool refit_happened_ = false;
    GpModel model_;
};

} // namespace

void handle_failure(TrialState& state, const PointU& x, const Observation& obs) {
    if (obs.ok()) raise(Errc::InvalidArgument, "handle_failure: observation is ok");
    HistoryRecord rec;
    rec.iteration = static_cast<int>(state.budget_used());
    rec.x = x;
    rec.obs = obs;
    rec.phase = "seq";
    state.history.push_back(rec);
    if (state.method.kind == MethodKind::Bo && state.method.acq.kind == AcqKind::Dycors)
        dycors_update(state.dycors, false, state.method.acq.dycors);
}

TrialState run_trial(const MethodSpec& method, const ConfigSpace& space,
                     const TemplateSet& templates, const ExecutorSpec& exec,
                     const LoopConfig& cfg) {
    auto t0 = std::chrono::steady_clock::now();
    std::ofstream log;
    std::ofstream* logp = nullptr;
    if (!cfg.log_dir.empty()) {
        fs::create_directories(cfg.log_dir);
        log.open(fs::path(cfg.log_dir) / ("trial-" + method.name + ".jsonl"),
                 std::ios::trunc);
        if (!log) raise(Errc::IoError, "cannot open trial log for " + method.name);
        logp = &log;
    }
    TrialRunner runner(method, space, templates, exec, cfg, logp);
    runner.run_from_start();
    runner.state().wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return std::move(runner.state());
}

TrialState resume_trial(const std::string& log_path, PointU* next) {
    ParsedTrialLog log = load_trial_log(log_path);
    if (log.aborted) raise(Errc::InvalidArgument, "cannot resume an aborted trial");
    ConfigSpace space = load_space(log.cfg.space_path);
    TemplateSet templates = load_templates(log.cfg.templates_path);
    if (space.dim() != log.full_dim)
        raise(Errc::DimensionMismatch, "schema dimension changed since the trial ran");

    LoopConfig cfg = log.cfg;
    cfg.log_dir.clear();

    std::ofstream out;
    std::ofstream* outp = nullptr;
    if (!next) {
        out.open(log_path, std::ios::app);
        if (!out) raise(Errc::IoError, "cannot append to " + log_path);
        outp = &out;
    }
    TrialRunner runner(log.method, space, templates, log.executor, cfg, outp);
    runner.resume(log, next);
    return std::move(runner.state());
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(Errc::IoError, "cannot open experiment config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        raise(Errc::ParseError, std::string("experiment config: ") + e.what());
    }

    ExperimentConfig cfg;
    cfg.space_path = j.at("space").get<std::string>();
    cfg.templates_path = j.at("templates").get<std::string>();
    cfg.out_dir = j.value("out", cfg.out_dir);
    cfg.budget = j.value("budget", cfg.budget);
    cfg.n_init = j.value("n_init", cfg.n_init);
    cfg.k_ref = j.value("k_ref", cfg.k_ref);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.parallelism = j.value("parallelism", cfg.parallelism);
    cfg.impute_failures = j.value("impute_failures", false);
    cfg.executor = executor_from_json(j.at("executor"));

    if (!j.contains("methods") || (j["methods"].is_string() && j["methods"] == "grid")) {
        cfg.methods = canonical_grid(cfg.seed, j.value("grid_m", std::size_t{20}),
                                     j.value("grid_refresh_every", std::size_t{10}));
    } else if (j["methods"].is_array()) {
        std::size_t idx = 0;
        for (const auto& jm : j["methods"]) {
            MethodSpec m;
            m.name = jm.at("name").get<std::string>();
            std::string kind = jm.value("kind", "bo");
            m.kind = kind == "random" ? MethodKind::Random : MethodKind::Bo;
            m.seed = jm.contains("seed") ? jm["seed"].get<std::uint64_t>()
                                         : derive_seed(cfg.seed, stream::kMethod, idx);
            if (m.kind == MethodKind::Bo) {
                m.dr.kind = dr_kind_from_name(jm.at("dr").get<std::string>());
                m.dr.m = jm.value("m", std::size_t{20});
                m.dr.refresh_every = jm.value("refresh_every", std::size_t{10});
                m.acq = default_acq(acq_kind_from_name(jm.at("acq").get<std::string>()), m.dr.m);
                m.acq.xi = jm.value("xi", m.acq.xi);
                m.acq.kappa = jm.value("kappa", m.acq.kappa);
            }
            cfg.methods.push_back(std::move(m));
            ++idx;
        }
    } else {
        raise(Errc::ParseError, "methods must be \"grid\" or an array");
    }
    if (cfg.methods.empty()) raise(Errc::InvalidArgument, "no methods configured");
    return cfg;
}

std::vector<TrialState> run_experiment(const ExperimentConfig& cfg, const ConfigSpace& space,
                                       const TemplateSet& templates) {
    fs::create_directories(cfg.out_dir);

    LoopConfig loop_cfg;
    loop_cfg.budget = cfg.budget;
    loop_cfg.n_init = cfg.n_init;
    loop_cfg.k_ref = cfg.k_ref;
    loop_cfg.impute_failures = cfg.impute_failures;
    loop_cfg.log_dir = cfg.out_dir;
    loop_cfg.space_path = cfg.space_path;
    loop_cfg.templates_path = cfg.templates_path;

    const std::size_t n = cfg.methods.size();
    std::vector<TrialState> results(n);
    std::size_t workers = cfg.parallelism == 0 ? n : std::min(cfg.parallelism, n);

    std::atomic<std::size_t> counter{0};
    auto work = [&]() {
        for (;;) {
            std::size_t i = counter.fetch_add(1);
            if (i >= n) return;
            try {
                results[i] = run_trial(cfg.methods[i], space, templates, cfg.executor, loop_cfg);
            } catch (const std::exception& e) {
                results[i].method = cfg.methods[i];
                results[i].aborted = true;
                results[i].abort_reason = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();

    json trials = json::array();
    for (const auto& st : results) {
        json jt{{"name", st.method.name},
                {"status", st.aborted ? "aborted" : "completed"},
                {"log", "trial-" + st.method.name + ".jsonl"},
                {"wall_clock_s", st.wall_clock_s}};
        if (st.aborted) {
            jt["reason"] = st.abort_reason;
        } else {
            int failures = 0;
            for (const auto& rec : st.history)
                if (!rec.obs.ok()) ++failures;
            jt["improvement_factor"] = st.incumbent_norm;
            jt["best_tps_raw"] =
                st.incumbent_index >= 0
                    ? st.history[static_cast<std::size_t>(st.incumbent_index)].obs.tps_raw
                    : 0.0;
            jt["noise_score"] = st.ref_stats.noise_score;
            jt["n_failures"] = failures;
            jt["evaluations"] = st.history.size();
        }
        trials.push_back(std::move(jt));
    }
    json manifest{{"generated", iso_now()},
                  {"budget", cfg.budget},
                  {"n_init", cfg.n_init},
                  {"k_ref", cfg.k_ref},
                  {"seed", cfg.seed},
                  {"space", cfg.space_path},
                  {"executor", executor_to_json(cfg.executor)},
                  {"trials", trials}};
    std::ofstream mf(fs::path(cfg.out_dir) / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";

    return results;
}

} // namespace tune
