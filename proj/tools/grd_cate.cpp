// grd-cate: experiment runner for graph-treatment CATE estimation.

#include "grd/basis_rlearner.hpp"
#include "grd/dataset_io.hpp"
#include "grd/harness.hpp"
#include "grd/parallel.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <map>

namespace {

grd::ExperimentConfig load_or_default(const std::string& path) {
    if (path.empty()) return grd::experiment_config_from_json(nlohmann::json::object());
    return grd::load_experiment_config(path);
}

void print_summary(const std::vector<grd::TrialResult>& rows) {
    grd::write_summary_csv(std::cout, grd::aggregate(rows));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CATE estimation for graph-valued treatments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    int seed = -1;
    bool quiet = false;

    auto* run = app.add_subcommand("run", "Train and evaluate all configured estimators");
    run->add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "Run a single trial seed instead of n_seeds");
    run->add_option("--out", out_dir, "Output directory");
    run->add_flag("--quiet", quiet, "Do not print the summary");

    std::vector<double> kappas;
    auto* sweep = app.add_subcommand("sweep-kappa", "Repeat the experiment across bias strengths");
    sweep->add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sweep->add_option("--kappas", kappas, "Bias strengths (defaults to the config's list, else 0 1 10 100)");
    sweep->add_option("--out", out_dir, "Output directory");
    sweep->add_flag("--quiet", quiet, "Do not print the summary");

    grd::QuasiOracleConfig qo;
    std::string qo_out;
    auto* quasi = app.add_subcommand("quasi-oracle", "Regret decay of the basis R-learner");
    quasi->add_option("--n", qo.n_grid, "Sample sizes")->capture_default_str();
    quasi->add_option("--kappa-rate", qo.kappa_rate, "Nuisance corruption rate")->capture_default_str();
    quasi->add_option("--seeds", qo.n_seeds, "Seeds per sample size")->capture_default_str();
    quasi->add_option("--master-seed", qo.master_seed)->capture_default_str();
    quasi->add_option("--penalty-c", qo.penalty_c, "lambda_n = c / sqrt(n)")->capture_default_str();
    quasi->add_option("--n-eval", qo.n_eval, "Evaluation points")->capture_default_str();
    quasi->add_option("--out", qo_out, "CSV path (default stdout)");

    std::string benchmark = "sw";
    std::uint64_t data_seed = 0;
    double data_kappa = 10.0;
    auto* gen = app.add_subcommand("gen-data", "Write a simulated benchmark as JSON lines");
    gen->add_option("--config", config_path, "Experiment config; its sim block is used")->check(CLI::ExistingFile);
    gen->add_option("--benchmark", benchmark, "sw or molecular")->capture_default_str();
    gen->add_option("--seed", data_seed, "Simulation seed")->capture_default_str();
    gen->add_option("--kappa", data_kappa, "Bias strength")->capture_default_str();
    gen->add_option("--out", out_dir, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            auto cfg = load_or_default(config_path);
            if (seed >= 0) {
                const auto rows = grd::run_trial(cfg, seed, cfg.sim.kappa);
                std::filesystem::create_directories(out_dir);
                std::ofstream os(std::filesystem::path(out_dir) / "results.csv");
                grd::write_results_csv(os, rows);
                std::ofstream ss(std::filesystem::path(out_dir) / "summary.csv");
                grd::write_summary_csv(ss, grd::aggregate(rows));
                std::ofstream ls(std::filesystem::path(out_dir) / "config.lock.json");
                ls << nlohmann::json{{"schema_version", 1},
                                     {"config", grd::to_json(cfg)},
                                     {"config_hash", grd::config_hash(cfg)},
                                     {"trial_seeds",
                                      {{{"seed", seed}, {"sim_seed", grd::trial_sim_seed(cfg.master_seed, seed)}}}}}
                          .dump(2)
                   << '\n';
                if (!quiet) print_summary(rows);
            } else {
                cfg.kappas.clear();
                const auto rows = grd::run_experiment(cfg, out_dir);
                if (!quiet) print_summary(rows);
            }
        } else if (*sweep) {
            auto cfg = load_or_default(config_path);
            if (!kappas.empty()) cfg.kappas = kappas;
            if (cfg.kappas.empty()) cfg.kappas = {0.0, 1.0, 10.0, 100.0};
            const auto rows = grd::run_experiment(cfg, out_dir);
            if (!quiet) print_summary(rows);
        } else if (*quasi) {
            qo.workers = grd::worker_count();
            const auto rows = grd::quasi_oracle_experiment(qo);
            if (qo_out.empty()) {
                grd::write_regret_csv(std::cout, rows);
            } else {
                std::ofstream os(qo_out);
                grd::write_regret_csv(os, rows);
            }
            std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_n;
            for (const auto& r : rows) {
                by_n[r.n].first.push_back(r.regret_oracle);
                by_n[r.n].second.push_back(r.regret_feasible);
            }
            for (auto& [n, v] : by_n) {
                std::cerr << "n=" << n << " median oracle=" << grd::median(v.first)
                          << " median feasible=" << grd::median(v.second) << '\n';
            }
        } else if (*gen) {
            grd::SimConfig sim;
            if (!config_path.empty()) {
                sim = grd::load_experiment_config(config_path).sim;
            } else {
                sim = grd::default_sim_config(grd::benchmark_from_string(benchmark));
                sim.kappa = data_kappa;
            }
            sim.master_seed = data_seed;
            grd::write_benchmark(grd::build_benchmark(sim), out_dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
