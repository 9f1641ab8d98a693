#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tune/bench.hpp"

using namespace tune;
namespace fs = std::filesystem;

namespace {

ConfigSpace tiny_space() {
    ConfigSpace s;
    ParameterSpec a;
    a.name = "alpha";
    a.kind = ParamKind::NumericFloat;
    a.lo = 0;
    a.hi = 1;
    a.default_value = 0.5;
    a.target_path = "alpha";
    ParameterSpec b;
    b.name = "beta";
    b.kind = ParamKind::NumericInt;
    b.lo = 0;
    b.hi = 100;
    b.default_value = std::int64_t{50};
    b.target_path = "beta";
    s.params = {a, b};
    s.version = "t";
    s.rebuild_index();
    return s;
}

TemplateSet tiny_templates() { return {{"cfg.yaml", "alpha: {{alpha}}\nbeta: {{beta}}\n"}}; }

PointU point2(double a, double b) {
    PointU p;
    p.coords = {a, b};
    return p;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("tune-bench-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

} // namespace

TEST_CASE("synthetic objective peaks at t0 and floors at half per factor") {
    SyntheticSpec spec;
    spec.effective_dims = {1, 3, 5};
    spec.weights = {0.05, 0.05, 0.05};
    spec.seed = 42;
    spec.t0 = 300.0;

    auto bumps = synthetic_bumps(spec);
    REQUIRE(bumps.size() == 3);

    PointU x;
    x.coords.assign(8, 0.5);
    for (const auto& b : bumps) x.coords[static_cast<std::size_t>(b.dim)] = b.peak;
    CHECK(synthetic_objective(x, spec) == 300.0); // product of maxima is exactly 1

    // push one factor to its floor (>= 9.5 widths away saturates to 0.5)
    PointU y = x;
    double off = bumps[0].peak > 0.5 ? bumps[0].peak - 9.5 * bumps[0].width
                                     : bumps[0].peak + 9.5 * bumps[0].width;
    y.coords[static_cast<std::size_t>(bumps[0].dim)] = off;
    CHECK(synthetic_objective(y, spec) == 150.0);

    // irrelevant coordinates contribute exactly nothing
    PointU z = x;
    z.coords[0] = 0.123;
    z.coords[7] = 0.999;
    CHECK(synthetic_objective(z, spec) == synthetic_objective(x, spec));
}

TEST_CASE("synthetic evaluate is deterministic at zero noise") {
    auto space = tiny_space();
    auto templates = tiny_templates();
    ExecutorSpec exec;
    exec.kind = ExecKind::Synthetic;
    exec.synthetic.effective_dims = {0, 1};
    exec.synthetic.noise_cv = 0.0;
    exec.synthetic.seed = 9;

    Rng r1(1), r2(2);
    Observation a = evaluate(point2(0.3, 0.6), space, templates, exec, r1);
    Observation b = evaluate(point2(0.3, 0.6), space, templates, exec, r2);
    CHECK(a.ok());
    CHECK(a.tps_raw == b.tps_raw);
    CHECK(a.config_hash == b.config_hash);
    CHECK(a.tx_success > 0);
    CHECK(a.latency.avg_ms > 0);
}

TEST_CASE("repeated noisy evaluations reproduce the configured CV") {
    auto space = tiny_space();
    auto templates = tiny_templates();
    ExecutorSpec exec;
    exec.kind = ExecKind::Synthetic;
    exec.synthetic.effective_dims = {0};
    exec.synthetic.noise_cv = 0.05;
    exec.synthetic.seed = 4;

    Rng rng(31);
    const int n = 1000;
    double sum = 0, sumsq = 0;
    for (int i = 0; i < n; ++i) {
        Observation obs = evaluate(point2(0.4, 0.4), space, templates, exec, rng);
        REQUIRE(obs.ok());
        sum += obs.tps_raw;
        sumsq += obs.tps_raw * obs.tps_raw;
    }
    double mean = sum / n;
    double sd = std::sqrt(std::max(sumsq / n - mean * mean, 0.0));
    double cv = sd / mean;
    CHECK(cv > 0.045);
    CHECK(cv < 0.055);
}

TEST_CASE("failure rules fire by coordinate threshold") {
    auto space = tiny_space();
    auto templates = tiny_templates();
    ExecutorSpec exec;
    exec.kind = ExecKind::Synthetic;
    exec.synthetic.effective_dims = {1};
    exec.synthetic.noise_cv = 0.0;
    exec.synthetic.failure_rules = {{0, '<', 0.5, 1.0}};

    Rng rng(6);
    Observation bad = evaluate(point2(0.2, 0.5), space, templates, exec, rng);
    CHECK(bad.status == ObsStatus::DeployFailed);
    CHECK(bad.tps_raw == 0.0);

    Observation good = evaluate(point2(0.7, 0.5), space, templates, exec, rng);
    CHECK(good.ok());

    exec.synthetic.failure_rules = {{0, '<', 0.5, 0.0}}; // zero probability
    Observation never = evaluate(point2(0.2, 0.5), space, templates, exec, rng);
    CHECK(never.ok());
}

TEST_CASE("infeasible configurations short-circuit before the executor") {
    auto space = tiny_space();
    Constraint imp;
    imp.kind = ConstraintKind::Implies;
    imp.param = "beta";
    imp.equals = std::int64_t{10};
    imp.then_param = "beta";
    imp.then_op = "ge";
    imp.then_value = std::int64_t{60};
    space.constraints = {imp};

    ExecutorSpec exec;
    exec.kind = ExecKind::Synthetic;
    exec.synthetic.effective_dims = {0};
    exec.synthetic.noise_cv = 0.0;

    Rng rng(7);
    Observation obs = evaluate(point2(0.5, 0.105), space, tiny_templates(), exec, rng); // beta = 10
    CHECK(obs.status == ObsStatus::Infeasible);
    CHECK(obs.config_hash.empty()); // materialization and executor never ran
    CHECK(obs.note.find("implies") != std::string::npos);
}

TEST_CASE("report parsing: single round") {
    auto m = parse_report_text(R"({"rounds":[
        {"succ":9000,"fail":0,"send_rate":155.0,"tps":150.0,
         "latency":{"min":5.0,"max":120.0,"avg":30.0}}]})");
    CHECK(m.tps == 150.0);
    CHECK(m.succ == 9000);
    CHECK(m.fail == 0);
    CHECK(static_cast<double>(m.succ) / static_cast<double>(m.succ + m.fail) == 1.0);
}

TEST_CASE("report parsing: transaction-weighted multi-round aggregation") {
    auto m = parse_report_text(R"({"rounds":[
        {"succ":3000,"fail":0,"send_rate":110.0,"tps":100.0,
         "latency":{"min":5.0,"max":100.0,"avg":20.0,"p50":18.0,"p95":60.0}},
        {"succ":6000,"fail":0,"send_rate":220.0,"tps":200.0,
         "latency":{"min":8.0,"max":250.0,"avg":50.0,"p50":45.0,"p95":170.0}}]})");
    CHECK(m.tps == doctest::Approx(166.6667).epsilon(1e-4));
    CHECK(m.succ == 9000);
    CHECK(m.latency.min_ms == 5.0);
    CHECK(m.latency.max_ms == 250.0);
    CHECK(m.latency.avg_ms == doctest::Approx(40.0));
    REQUIRE(m.latency.p50_ms.has_value());
    CHECK(*m.latency.p50_ms == doctest::Approx(36.0));
}

TEST_CASE("report parsing: malformed inputs") {
    CHECK_THROWS_WITH_AS(parse_report_text(R"({"rounds":[
        {"succ":10,"fail":0,"send_rate":1.0,"latency":{"min":1,"max":2,"avg":1.5}}]})"),
                         doctest::Contains("tps"), TuneError);
    CHECK_THROWS_AS(parse_report_text("not json"), TuneError);
    CHECK_THROWS_AS(parse_report_text(R"({"rounds":[]})"), TuneError);
    CHECK_THROWS_AS(parse_report_text(R"([1,2,3])"), TuneError);
    CHECK_THROWS_WITH_AS(parse_report_text(R"({"rounds":[
        {"succ":10,"fail":0,"send_rate":1.0,"tps":1.0}]})"),
                         doctest::Contains("latency"), TuneError);
}

TEST_CASE("write_report round-trips through parse_report") {
    TempDir dir;
    ReportMetrics m;
    RoundMetrics r1{3000, 10, 110.5, 100.25, {5.0, 100.0, 20.5, 18.0, 60.0}};
    RoundMetrics r2{6000, 0, 220.0, 200.75, {8.0, 250.0, 50.0, std::nullopt, std::nullopt}};
    m = aggregate_rounds({r1, r2});

    std::string path = (dir.path / "report.json").string();
    write_report(m, path);
    ReportMetrics back = parse_report(path);
    REQUIRE(back.rounds.size() == 2);
    CHECK(back.rounds[0].succ == 3000);
    CHECK(back.rounds[0].tps == 100.25);
    CHECK(back.rounds[1].latency.max_ms == 250.0);
    CHECK(back.tps == m.tps);
    CHECK(back.succ == m.succ);
    CHECK(back.latency.avg_ms == m.latency.avg_ms);
}

TEST_CASE("sample report file parses") {
    auto m = parse_report(std::string(TUNE_DATA_DIR) + "/sample-report.json");
    CHECK(m.rounds.size() == 2);
    CHECK(m.succ == 17800);
    CHECK(m.tps > 280.0);
}

TEST_CASE("external executor: report consumed, failures classified") {
    auto space = tiny_space();
    auto templates = tiny_templates();
    TempDir dir;

    ExecutorSpec exec;
    exec.kind = ExecKind::External;
    exec.external.workdir = dir.path.string();
    exec.external.timeout_s = 30;
    exec.external.report_path = "report.json";

    Rng rng(1);

    SUBCASE("success writes and parses a report") {
        exec.external.command =
            R"(test -f cfg.yaml && printf '{"rounds":[{"succ":100,"fail":1,"send_rate":11.0,"tps":10.5,"latency":{"min":1.0,"max":9.0,"avg":3.0}}]}' > report.json)";
        Observation obs = evaluate(point2(0.5, 0.5), space, templates, exec, rng, "ok-case");
        CHECK(obs.ok());
        CHECK(obs.tps_raw == 10.5);
        CHECK(obs.tx_success == 100);
        CHECK(obs.tx_fail == 1);
        CHECK_FALSE(obs.config_hash.empty());
    }
    SUBCASE("exit 0 without a report is bench_failed") {
        exec.external.command = "true";
        Observation obs = evaluate(point2(0.5, 0.5), space, templates, exec, rng, "no-report");
        CHECK(obs.status == ObsStatus::BenchFailed);
    }
    SUBCASE("nonzero exit is deploy_failed") {
        exec.external.command = "exit 3";
        Observation obs = evaluate(point2(0.5, 0.5), space, templates, exec, rng, "bad-exit");
        CHECK(obs.status == ObsStatus::DeployFailed);
        CHECK(obs.note.find("3") != std::string::npos);
    }
    SUBCASE("invalid report is bench_failed") {
        exec.external.command = "echo garbage > report.json";
        Observation obs = evaluate(point2(0.5, 0.5), space, templates, exec, rng, "bad-report");
        CHECK(obs.status == ObsStatus::BenchFailed);
    }
}

TEST_CASE("compute_reference aggregates K runs") {
    auto space = tiny_space();
    auto templates = tiny_templates();

    SUBCASE("zero-noise synthetic runs give zero noise score") {
        ExecutorSpec exec;
        exec.kind = ExecKind::Synthetic;
        exec.synthetic.effective_dims = {0};
        exec.synthetic.noise_cv = 0.0;
        Rng rng(2);
        ReferenceStats stats =
            compute_reference(point2(0.5, 0.5), 3, space, templates, exec, rng);
        REQUIRE(stats.runs.size() == 3);
        CHECK(stats.runs[0] == stats.runs[1]);
        CHECK(stats.noise_score == 0.0);
        CHECK(stats.ref_mean == stats.runs[0]);
    }

    SUBCASE("sample standard deviation over the mean: runs 90 and 110") {
        // external command emits 90 on the first call, 110 on the second
        TempDir dir;
        std::string state = (dir.path / "state").string();
        ExecutorSpec exec;
        exec.kind = ExecKind::External;
        exec.external.workdir = dir.path.string();
        exec.external.timeout_s = 30;
        exec.external.command =
            "if [ -f " + state + " ]; then TPS=110; else TPS=90; touch " + state +
            "; fi; printf '{\"rounds\":[{\"succ\":100,\"fail\":0,\"send_rate\":120.0,\"tps\":%s.0,"
            "\"latency\":{\"min\":1.0,\"max\":9.0,\"avg\":3.0}}]}' $TPS > report.json";
        Rng rng(3);
        ReferenceStats stats =
            compute_reference(point2(0.5, 0.5), 2, space, templates, exec, rng);
        REQUIRE(stats.runs.size() == 2);
        CHECK(stats.runs[0] == 90.0);
        CHECK(stats.runs[1] == 110.0);
        CHECK(stats.ref_mean == 100.0);
        CHECK(stats.noise_score == doctest::Approx(0.14142).epsilon(1e-4));

        // normalization arithmetic: 112 against a mean of 100
        CHECK(112.0 / stats.ref_mean == doctest::Approx(1.12));
    }

    SUBCASE("any failed run raises ReferenceFailed") {
        ExecutorSpec exec;
        exec.kind = ExecKind::Synthetic;
        exec.synthetic.effective_dims = {0};
        exec.synthetic.failure_rules = {{0, '<', 1.1, 1.0}}; // always fails
        Rng rng(4);
        CHECK_THROWS_AS(compute_reference(point2(0.5, 0.5), 2, space, templates, exec, rng),
                        TuneError);
    }

    SUBCASE("a provided first observation counts as run one") {
        ExecutorSpec exec;
        exec.kind = ExecKind::Synthetic;
        exec.synthetic.effective_dims = {0};
        exec.synthetic.noise_cv = 0.0;
        Rng rng(5);
        Observation first = evaluate(point2(0.5, 0.5), space, templates, exec, rng);
        ReferenceStats stats =
            compute_reference(point2(0.5, 0.5), 2, space, templates, exec, rng, &first);
        CHECK(stats.runs[0] == first.tps_raw);
    }
}
