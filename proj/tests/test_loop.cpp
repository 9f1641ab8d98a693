#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tune/design.hpp"
#include "tune/loop.hpp"

using namespace tune;
namespace fs = std::filesystem;

namespace {

ConfigSpace loop_space() {
    ConfigSpace s;
    for (int i = 0; i < 6; ++i) {
        ParameterSpec p;
        p.name = "p" + std::to_string(i);
        p.kind = i % 2 == 0 ? ParamKind::NumericFloat : ParamKind::NumericInt;
        p.lo = 0;
        p.hi = 100;
        p.default_value = p.kind == ParamKind::NumericFloat ? Value{50.0} : Value{std::int64_t{50}};
        p.target_path = p.name;
        s.params.push_back(std::move(p));
    }
    s.version = "t";
    s.rebuild_index();
    return s;
}

TemplateSet loop_templates() {
    std::string t;
    for (int i = 0; i < 6; ++i) t += "p" + std::to_string(i) + ": {{p" + std::to_string(i) + "}}\n";
    return {{"cfg.yaml", t}};
}

ExecutorSpec loop_exec(double noise_cv = 0.01) {
    ExecutorSpec exec;
    exec.kind = ExecKind::Synthetic;
    exec.synthetic.effective_dims = {0, 3};
    exec.synthetic.noise_cv = noise_cv;
    exec.synthetic.seed = 77;
    exec.synthetic.t0 = 200.0;
    return exec;
}

MethodSpec bo_method(const std::string& name, AcqKind acq, DrKind dr, std::uint64_t seed,
                     std::size_t m = 4) {
    MethodSpec ms;
    ms.name = name;
    ms.kind = MethodKind::Bo;
    ms.acq = default_acq(acq, m);
    ms.dr.kind = dr;
    ms.dr.m = m;
    ms.dr.refresh_every = 5;
    ms.seed = seed;
    return ms;
}

MethodSpec random_method(std::uint64_t seed) {
    MethodSpec ms;
    ms.name = "random";
    ms.kind = MethodKind::Random;
    ms.seed = seed;
    return ms;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("tune-loop-" + tag + "-" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

bool same_history(const TrialState& a, const TrialState& b) {
    if (a.history.size() != b.history.size()) return false;
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        if (a.history[i].x.coords != b.history[i].x.coords) return false;
        if (a.history[i].obs.tps_raw != b.history[i].obs.tps_raw) return false;
        if (a.history[i].obs.status != b.history[i].obs.status) return false;
    }
    return true;
}

} // namespace

TEST_CASE("random trials consume exactly the budget and beat the reference") {
    auto space = loop_space();
    auto templates = loop_templates();
    auto exec = loop_exec(0.05);
    LoopConfig cfg;
    cfg.budget = 50;
    cfg.n_init = 10;
    cfg.k_ref = 3;

    int at_or_above_one = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        TrialState st = run_trial(random_method(seed), space, templates, exec, cfg);
        REQUIRE_FALSE(st.aborted);
        CHECK(st.history.size() == 50);
        if (st.incumbent_norm >= 1.0) ++at_or_above_one;
    }
    CHECK(at_or_above_one >= 18);
}

TEST_CASE("bo trials: budget exactness, incumbent monotonicity, normalization identity") {
    auto space = loop_space();
    auto templates = loop_templates();
    auto exec = loop_exec();
    LoopConfig cfg;
    cfg.budget = 45;
    cfg.n_init = 12;
    cfg.k_ref = 3;

    for (auto& ms : {bo_method("EI-PCA", AcqKind::Ei, DrKind::Pca, 1),
                     bo_method("DYCORS-SA", AcqKind::Dycors, DrKind::Sa, 2),
                     bo_method("UCB-REMBO", AcqKind::Ucb, DrKind::Rembo, 3),
                     bo_method("MPI-SHAP", AcqKind::Mpi, DrKind::Shap, 4)}) {
        TrialState st = run_trial(ms, space, templates, exec, cfg);
        REQUIRE_FALSE(st.aborted);
        CHECK(st.history.size() == 45);

        double running = 0.0;
        for (const auto& rec : st.history) {
            if (rec.obs.ok()) {
                CHECK(rec.obs.tps_norm * st.ref_stats.ref_mean ==
                      doctest::Approx(rec.obs.tps_raw).epsilon(1e-9));
                running = std::max(running, rec.obs.tps_norm);
            }
        }
        CHECK(st.incumbent_norm == running);
        CHECK(st.history[0].obs.tps_norm == 1.0); // reference record normalizes to exactly 1
        CHECK(st.history[0].obs.tps_raw == st.ref_stats.ref_mean);
    }
}

TEST_CASE("identical seeds give bitwise-identical histories") {
    auto space = loop_space();
    auto templates = loop_templates();
    auto exec = loop_exec();
    LoopConfig cfg;
    cfg.budget = 36;
    cfg.n_init = 10;
    cfg.k_ref = 3;

    for (auto& ms : {bo_method("EI-SA", AcqKind::Ei, DrKind::Sa, 9),
                     bo_method("DYCORS-PCA", AcqKind::Dycors, DrKind::Pca, 10),
                     random_method(11)}) {
        TrialState a = run_trial(ms, space, templates, exec, cfg);
        TrialState b = run_trial(ms, space, templates, exec, cfg);
        CHECK(same_history(a, b));
    }
}

TEST_CASE("failed evaluations consume budget, stay out of the surrogate, shrink DYCORS sigma") {
    auto space = loop_space();
    auto templates = loop_templates();
    auto exec = loop_exec();
    exec.synthetic.failure_rules = {{1, '<', 0.45, 1.0}}; // ~45% of proposals fail

    LoopConfig cfg;
    cfg.budget = 40;
    cfg.n_init = 10;
    cfg.k_ref = 2;

    // pick a seed whose reference point clears the failing region
    std::uint64_t seed = 0;
    for (; seed < 100; ++seed) {
        auto design = lhs({cfg.n_init, space.dim(), derive_seed(seed, stream::kLhs)});
        if (design[0].coords[1] >= 0.45) break;
    }
    REQUIRE(seed < 100);

    MethodSpec ms = bo_method("EI-PCA", AcqKind::Ei, DrKind::Pca, seed);
    TrialState st = run_trial(ms, space, templates, exec, cfg);
    REQUIRE_FALSE(st.aborted);
    CHECK(st.history.size() == 40);

    std::size_t failures = 0, oks = 0;
    for (const auto& rec : st.history)
        rec.obs.ok() ? ++oks : ++failures;
    REQUIRE(failures > 0);

    // same trial with penalty imputation trains on every record instead
    LoopConfig cfg_imputed = cfg;
    cfg_imputed.impute_failures = true;
    TrialState st2 = run_trial(ms, space, templates, exec, cfg_imputed);
    REQUIRE_FALSE(st2.aborted);
    CHECK(st.last_train_n < st2.last_train_n);

    // failed records never become the incumbent
    for (const auto& rec : st.history)
        if (!rec.obs.ok()) CHECK(rec.obs.tps_norm == 0.0);
    CHECK(st.incumbent_norm >= 1.0);

    // DYCORS counts failures as non-improving steps: sigma decays
    MethodSpec dy = bo_method("DYCORS-PCA", AcqKind::Dycors, DrKind::Pca, seed);
    dy.acq.dycors.fail_tol = 3;
    TrialState st3 = run_trial(dy, space, templates, exec, cfg);
    REQUIRE_FALSE(st3.aborted);
    CHECK(st3.dycors.sigma < dy.acq.dycors.sigma_init);
}

TEST_CASE("handle_failure applies the failure policy") {
    TrialState st;
    st.method = bo_method("DYCORS-PCA", AcqKind::Dycors, DrKind::Pca, 0);
    st.method.acq.dycors.fail_tol = 3;
    st.dycors.sigma = 0.2;
    st.budget_total = 10;

    PointU x;
    x.coords = {0.5};
    Observation obs;
    obs.status = ObsStatus::DeployFailed;
    for (int i = 0; i < 3; ++i) handle_failure(st, x, obs);
    CHECK(st.history.size() == 3);
    CHECK(st.dycors.sigma == doctest::Approx(0.1)); // halved after fail_tol
    CHECK(st.incumbent_index == -1);

    Observation ok_obs;
    ok_obs.status = ObsStatus::Ok;
    CHECK_THROWS_AS(handle_failure(st, x, ok_obs), TuneError);
}

TEST_CASE("reference failure aborts the trial with a diagnosis") {
    auto space = loop_space();
    auto templates = loop_templates();
    auto exec = loop_exec();
    exec.synthetic.failure_rules = {{0, '<', 1.1, 1.0}}; // everything fails

    LoopConfig cfg;
    cfg.budget = 20;
    cfg.n_init = 5;
    cfg.k_ref = 3;

    TrialState st = run_trial(random_method(5), space, templates, exec, cfg);
    CHECK(st.aborted);
    CHECK(st.abort_reason.find("ReferenceFailed") != std::string::npos);
}

TEST_CASE("trial logs replay: resume reproduces the original run") {
    auto space = loop_space();
    auto templates = loop_templates();
    auto exec = loop_exec();
    TempDir dir("replay");

    LoopConfig cfg;
    cfg.budget = 30;
    cfg.n_init = 10;
    cfg.k_ref = 3;
    cfg.log_dir = dir.path.string();
    cfg.space_path = (dir.path / "space.json").string();
    cfg.templates_path = (dir.path / "templates").string();

    // resume reloads space/templates from the paths in the log head
    {
        std::ifstream src(std::string(TUNE_DATA_DIR) + "/fabric-317.json");
        std::ofstream dst(cfg.space_path);
        // the trial uses its own tiny space; write it as JSON by hand
        dst << R"({"version":"t","params":[)";
        for (int i = 0; i < 6; ++i) {
            if (i) dst << ",";
            dst << R"({"name":"p)" << i << R"(","kind":")"
                << (i % 2 == 0 ? "numeric-float" : "numeric-int")
                << R"(","lo":0,"hi":100,"default":50,"target_path":"p)" << i << R"("})";
        }
        dst << "]}";
        fs::create_directories(cfg.templates_path);
        std::ofstream t(fs::path(cfg.templates_path) / "cfg.yaml");
        for (int i = 0; i < 6; ++i) t << "p" << i << ": {{p" << i << "}}\n";
    }

    for (auto& ms : {bo_method("EI-SA", AcqKind::Ei, DrKind::Sa, 21),
                     bo_method("DYCORS-SHAP", AcqKind::Dycors, DrKind::Shap, 22),
                     random_method(23)}) {
        TrialState full = run_trial(ms, space, templates, exec, cfg);
        REQUIRE_FALSE(full.aborted);
        std::string log_path = (dir.path / ("trial-" + ms.name + ".jsonl")).string();

        for (std::size_t cut : {5UL, 12UL, 23UL}) {
            // truncate the log to `cut` eval records
            std::ifstream in(log_path);
            std::ostringstream keep;
            std::string line;
            std::size_t evals = 0;
            while (std::getline(in, line)) {
                if (line.find("\"type\":\"eval\"") != std::string::npos) {
                    if (evals == cut) break;
                    ++evals;
                }
                keep << line << "\n";
            }
            std::string trunc_path =
                (dir.path / ("trunc-" + ms.name + "-" + std::to_string(cut) + ".jsonl")).string();
            std::ofstream out(trunc_path, std::ios::trunc);
            out << keep.str();
            out.close();

            // next-proposal replay
            PointU next;
            resume_trial(trunc_path, &next);
            CHECK(next.coords == full.history[cut].x.coords);

            // full continuation replay
            TrialState resumed = resume_trial(trunc_path);
            CHECK(same_history(full, resumed));
        }
    }
}

TEST_CASE("run_experiment executes the canonical grid with isolation") {
    auto space = loop_space();
    auto templates = loop_templates();
    TempDir dir("exp");

    ExperimentConfig cfg;
    cfg.space_path = "unused";
    cfg.templates_path = "unused";
    cfg.out_dir = (dir.path / "out").string();
    cfg.executor = loop_exec();
    cfg.budget = 24;
    cfg.n_init = 8;
    cfg.k_ref = 2;
    cfg.seed = 99;
    cfg.methods = canonical_grid(99, 4, 5);
    REQUIRE(cfg.methods.size() == 17);

    cfg.parallelism = 4;
    auto results = run_experiment(cfg, space, templates);
    REQUIRE(results.size() == 17);
    int completed = 0;
    for (const auto& st : results) {
        if (!st.aborted) {
            ++completed;
            CHECK(st.history.size() == 24);
        }
    }
    CHECK(completed == 17);
    CHECK(fs::exists(fs::path(cfg.out_dir) / "manifest.json"));
    for (const auto& ms : cfg.methods)
        CHECK(fs::exists(fs::path(cfg.out_dir) / ("trial-" + ms.name + ".jsonl")));

    // scheduling independence: serial run gives identical histories
    ExperimentConfig serial = cfg;
    serial.out_dir = (dir.path / "serial").string();
    serial.parallelism = 1;
    auto serial_results = run_experiment(serial, space, templates);
    for (std::size_t i = 0; i < results.size(); ++i)
        CHECK(same_history(results[i], serial_results[i]));
}

TEST_CASE("one aborting trial leaves the others complete") {
    auto space = loop_space();
    auto templates = loop_templates();
    TempDir dir("iso");

    // failure region x[2] < 0.25: find a master seed where exactly one
    // method's reference point falls inside it
    ExecutorSpec exec = loop_exec();
    exec.synthetic.failure_rules = {{2, '<', 0.25, 1.0}};

    std::vector<MethodSpec> methods = {random_method(0), random_method(0), random_method(0)};
    std::uint64_t master = 0;
    int bad_index = -1;
    for (master = 0; master < 3000; ++master) {
        int bad = 0;
        for (std::size_t i = 0; i < methods.size(); ++i) {
            std::uint64_t seed = derive_seed(master, stream::kMethod, i);
            auto design = lhs({8, space.dim(), derive_seed(seed, stream::kLhs)});
            if (design[0].coords[2] < 0.25) {
                ++bad;
                bad_index = static_cast<int>(i);
            }
        }
        if (bad == 1) break;
    }
    REQUIRE(master < 3000);
    for (std::size_t i = 0; i < methods.size(); ++i) {
        methods[i].seed = derive_seed(master, stream::kMethod, i);
        methods[i].name = "random-" + std::to_string(i);
    }

    ExperimentConfig cfg;
    cfg.space_path = "unused";
    cfg.templates_path = "unused";
    cfg.out_dir = (dir.path / "out").string();
    cfg.executor = exec;
    cfg.budget = 16;
    cfg.n_init = 8;
    cfg.k_ref = 2;
    cfg.methods = methods;
    cfg.parallelism = 3;

    auto results = run_experiment(cfg, space, templates);
    REQUIRE(results.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        if (static_cast<int>(i) == bad_index) {
            CHECK(results[i].aborted);
        } else {
            CHECK_FALSE(results[i].aborted);
            CHECK(results[i].history.size() == 16);
        }
    }
}

TEST_CASE("loop configuration validation") {
    auto space = loop_space();
    auto templates = loop_templates();
    auto exec = loop_exec();
    LoopConfig cfg;
    cfg.budget = 10;
    cfg.n_init = 10; // budget must exceed n_init
    CHECK_THROWS_AS(run_trial(random_method(1), space, templates, exec, cfg), TuneError);
    cfg.n_init = 0;
    CHECK_THROWS_AS(run_trial(random_method(1), space, templates, exec, cfg), TuneError);
}

TEST_CASE("experiment config parses methods and executor") {
    TempDir dir("cfg");
    std::string path = (dir.path / "exp.json").string();
    {
        std::ofstream out(path);
        out << R"({
          "space": "s.json", "templates": "tpl", "out": "o",
          "budget": 50, "n_init": 10, "k_ref": 4, "seed": 7,
          "executor": {"kind":"synthetic","synthetic":{"effective_dims":[1,2],"noise_cv":0.01,"seed":3,"t0":250.0}},
          "methods": "grid"
        })";
    }
    ExperimentConfig cfg = load_experiment_config(path);
    CHECK(cfg.methods.size() == 17);
    CHECK(cfg.budget == 50);
    CHECK(cfg.k_ref == 4);
    CHECK(cfg.executor.synthetic.t0 == 250.0);
    CHECK(cfg.methods[0].name == "EI-PCA");
    CHECK(cfg.methods[16].name == "random");
    // seeds are distinct
    for (std::size_t i = 0; i < cfg.methods.size(); ++i)
        for (std::size_t j = i + 1; j < cfg.methods.size(); ++j)
            CHECK(cfg.methods[i].seed != cfg.methods[j].seed);

    std::string explicit_path = (dir.path / "exp2.json").string();
    {
        std::ofstream out(explicit_path);
        out << R"({
          "space": "s.json", "templates": "tpl",
          "executor": {"kind":"external","external":{"command":"run.sh","workdir":"w","timeout_s":120,"report_path":"r.json"}},
          "methods": [
            {"name":"UCB-SA","kind":"bo","acq":"UCB","dr":"SA","kappa":1.5,"m":8},
            {"name":"rnd","kind":"random","seed":42}
          ]
        })";
    }
    ExperimentConfig cfg2 = load_experiment_config(explicit_path);
    REQUIRE(cfg2.methods.size() == 2);
    CHECK(cfg2.methods[0].acq.kind == AcqKind::Ucb);
    CHECK(cfg2.methods[0].acq.kappa == 1.5);
    CHECK(cfg2.methods[0].dr.kind == DrKind::Sa);
    CHECK(cfg2.methods[0].dr.m == 8);
    CHECK(cfg2.methods[1].seed == 42);
    CHECK(cfg2.executor.kind == ExecKind::External);
    CHECK(cfg2.executor.external.timeout_s == 120.0);
}
