#include "grd/harness.hpp"
#include "grd/parallel.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

using namespace grd;

namespace {

ExperimentConfig tiny_experiment() {
    ExperimentConfig cfg = experiment_config_from_json(nlohmann::json::parse(R"({
        "sim": {"n_in": 60, "n_out": 30, "n_treatments": 8, "d_x": 5, "kappa": 2.0},
        "estimators": ["zero", "gnn", "cat", "graphite", "sin"],
        "train": {"embed_dim": 4, "cov_hidden": 8, "cov_out": 4, "treat_hidden": 4, "m_hidden": 8, "e_hidden": 8,
                  "head_hidden": 8, "stage1_epochs": 5, "stage2_epochs": 3, "inner_steps": 2, "epochs": 5},
        "eval_ks": [3, 6],
        "n_seeds": 2,
        "workers": 1
    })"));
    return cfg;
}

std::string csv(const std::vector<TrialResult>& rows, bool timing) {
    std::ostringstream os;
    write_results_csv(os, rows, timing);
    return os.str();
}

}  // namespace

TEST_CASE("experiment config parsing") {
    const ExperimentConfig cfg = tiny_experiment();
    CHECK(cfg.sim.n_in == 60);
    CHECK(cfg.train.embed_dim == 4);
    CHECK(experiment_config_from_json(to_json(cfg)).estimators == cfg.estimators);
    CHECK(config_hash(experiment_config_from_json(to_json(cfg))) == config_hash(cfg));
    CHECK_THROWS(experiment_config_from_json(nlohmann::json{{"n_seeds", 0}}));
    CHECK_THROWS(experiment_config_from_json(nlohmann::json{{"estimators", {"nope"}}}));
    CHECK_THROWS(experiment_config_from_json(nlohmann::json{{"bogus", 1}}));
    const auto mol = experiment_config_from_json(nlohmann::json{{"benchmark", "molecular"}});
    CHECK(mol.sim.benchmark == BenchmarkKind::MolecularSurrogate);
    const auto over = experiment_config_from_json(nlohmann::json::parse(R"({"train_overrides": {"sin": {"lr_g": 0.01}}})"));
    CHECK(over.train_config_for("sin").lr_g == 0.01);
    CHECK(over.train_config_for("gnn").lr_g == over.train.lr_g);
}

TEST_CASE("a trial produces one row per estimator, split, K and metric") {
    const ExperimentConfig cfg = tiny_experiment();
    const auto rows = run_trial(cfg, 0, cfg.sim.kappa);
    CHECK(rows.size() == 5 * 2 * 2 * 2);
    for (const auto& r : rows) {
        CHECK(r.error.empty());
        CHECK(std::isfinite(r.value));
        CHECK(r.value >= 0.0);
    }
}

TEST_CASE("trials are deterministic up to timing") {
    const ExperimentConfig cfg = tiny_experiment();
    CHECK(csv(run_trial(cfg, 1, 2.0), false) == csv(run_trial(cfg, 1, 2.0), false));
}

TEST_CASE("zero rows match the metric directly") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.estimators = {"zero"};
    const auto rows = run_trial(cfg, 0, 2.0);
    SimConfig sim = cfg.sim;
    sim.master_seed = trial_sim_seed(cfg.master_seed, 0);
    const Benchmark b = build_benchmark(sim);
    ZeroEstimator zero;
    for (const auto& r : rows) {
        const Split s = split_from_string(r.split);
        const double v = pehe_at_k(zero, b.split(s), *b.truth, b.propensity, EvalConfig{r.K, r.metric == "wpehe", s}).value;
        CHECK(r.value == v);
    }
}

TEST_CASE("estimator failures become NaN rows") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.estimators = {"zero"};
    cfg.eval_ks = {20};
    const auto rows = run_trial(cfg, 0, 2.0);
    for (const auto& r : rows) {
        CHECK(std::isnan(r.value));
        CHECK_FALSE(r.error.empty());
    }
}

TEST_CASE("aggregation") {
    std::vector<TrialResult> rows;
    for (double v : {1.0, 2.0, 3.0, std::nan("")}) {
        TrialResult r;
        r.estimator = "a";
        r.split = "in";
        r.metric = "upehe";
        r.K = 6;
        r.value = v;
        rows.push_back(r);
    }
    rows.push_back(rows.front());
    rows.back().estimator = "b";
    const auto s = aggregate(rows);
    REQUIRE(s.size() == 2);
    CHECK(s[0].mean == 2.0);
    CHECK(s[0].stderr_ == doctest::Approx(1.0 / std::sqrt(3.0)));
    CHECK(s[0].n == 3);
    CHECK(s[0].n_nan == 1);
    CHECK_FALSE(s[0].single_seed);
    CHECK(s[1].stderr_ == 0.0);
    CHECK(s[1].single_seed);
}

TEST_CASE("results csv round trip") {
    TrialResult r;
    r.estimator = "sin";
    r.split = "out";
    r.metric = "wpehe";
    r.K = 6;
    r.kappa = 10;
    r.seed = 3;
    r.value = 0.1 + 0.2;
    r.seconds = 1.5;
    r.config_hash = "abc";
    r.error = "bad, \"quoted\"";
    std::istringstream is(csv({r}, true));
    const auto back = read_results_csv(is);
    REQUIRE(back.size() == 1);
    CHECK(back[0].value == r.value);
    CHECK(back[0].error == r.error);
    CHECK(back[0].kappa == 10);
}

TEST_CASE("hpo random search") {
    HpoSpace point{nlohmann::json{{"lr", {{"choice", {0.01}}}}}};
    Rng rng(1);
    std::vector<double> scores;
    int calls = 0;
    const TrainConfig best = random_search_hpo(point, TrainConfig{}, 10, rng, [&](const TrainConfig& c) {
        ++calls;
        return c.lr;
    }, &scores);
    CHECK(calls == 10);
    CHECK(best.lr == 0.01);

    HpoSpace space{nlohmann::json::parse(R"({"lr": {"log_float": [1e-4, 1e-2]}, "embed_dim": {"int": [2, 8]},
                                             "hsic_weight": {"choice": [0.01, 1, 100]}})")};
    for (int i = 0; i < 20; ++i) {
        const TrainConfig c = random_search_hpo(space, TrainConfig{}, 3, rng, [](const TrainConfig& c) { return c.lr; });
        CHECK(space.contains(c));
    }
    CHECK_THROWS(HpoSpace{nlohmann::json{{"nope", {{"int", {1, 2}}}}}}.validate());
    CHECK_THROWS(HpoSpace{nlohmann::json{{"lr", {{"int", {3, 2}}}}}}.validate());
}

TEST_CASE("validation scoring uses outcome prediction") {
    ExperimentConfig cfg = tiny_experiment();
    SimConfig sim = cfg.sim;
    const Benchmark b = build_benchmark(sim);
    const double mse = validation_outcome_mse("gnn", b.in_sample, cfg.train, 0.2, 7);
    CHECK(std::isfinite(mse));
    CHECK(mse == validation_outcome_mse("gnn", b.in_sample, cfg.train, 0.2, 7));
    CHECK_THROWS(validation_outcome_mse("zero", b.in_sample, cfg.train, 0.2, 7));
}

TEST_CASE("hpo-enabled trial") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.estimators = {"gnn"};
    cfg.hpo.enabled = true;
    cfg.hpo.n_trials = 2;
    cfg.hpo.spaces["gnn"] = HpoSpace{nlohmann::json::parse(R"({"lr": {"log_float": [1e-4, 1e-2]}})")};
    const auto a = run_trial(cfg, 0, 2.0);
    CHECK(csv(a, false) == csv(run_trial(cfg, 0, 2.0), false));
    for (const auto& r : a) CHECK(r.error.empty());
}

TEST_CASE("kappa sweep merges cells in order") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.estimators = {"zero", "gnn"};
    cfg.workers = 2;
    const auto dir = std::filesystem::temp_directory_path() / "grd_sweep_test";
    std::filesystem::remove_all(dir);
    const auto rows = kappa_sweep(cfg, {0.0, 5.0}, dir / "staging");
    CHECK(rows.size() == 2 * 2 * 2 * 2 * 2 * 2);
    CHECK(rows.front().kappa == 0.0);
    CHECK(rows.back().kappa == 5.0);
    CHECK(rows.front().seed == 0);
    cfg.workers = 1;
    CHECK(csv(rows, false) == csv(kappa_sweep(cfg, {0.0, 5.0}, std::nullopt), false));

    cfg.kappas = {0.0};
    cfg.n_seeds = 1;
    run_experiment(cfg, dir / "run");
    for (const char* f : {"results.csv", "summary.csv", "config.lock.json"}) CHECK(std::filesystem::exists(dir / "run" / f));
    std::ifstream lock(dir / "run" / "config.lock.json");
    const auto j = nlohmann::json::parse(lock);
    CHECK(j.at("trial_seeds").size() == 1);
    std::filesystem::remove_all(dir);
}

TEST_CASE("parallel_for visits every index and rethrows") {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(100, 4, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS(parallel_for(10, 3, [](std::size_t i) {
        if (i == 5) throw std::runtime_error("boom");
    }));
    setenv("GRD_CATE_THREADS", "3", 1);
    CHECK(worker_count() == 3);
    unsetenv("GRD_CATE_THREADS");
}
