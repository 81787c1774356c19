#pragma once

#include "grd/estimators.hpp"
#include "grd/metrics.hpp"
#include "grd/simulation.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace grd {

/// Search space over TrainConfig fields. Each entry is one of
///   {"int": [lo, hi]}, {"float": [lo, hi]}, {"log_float": [lo, hi]},
///   {"choice": [v0, v1, ...]}.
struct HpoSpace {
    nlohmann::json ranges = nlohmann::json::object();

    bool empty() const { return ranges.empty(); }
    nlohmann::json sample(Rng& rng) const;
    bool contains(const TrainConfig& cfg) const;
    void validate() const;
};

struct HpoSettings {
    bool enabled = false;
    int n_trials = 10;
    double validation_fraction = 0.2;
    std::map<std::string, HpoSpace> spaces;  // per estimator
};

struct ExperimentConfig {
    SimConfig sim;
    std::vector<std::string> estimators{"zero", "cat", "gnn", "graphite", "sin"};
    TrainConfig train;
    std::map<std::string, nlohmann::json> train_overrides;  // per estimator
    HpoSettings hpo;
    std::vector<int> eval_ks{6};
    std::vector<double> kappas;  // empty: sim.kappa only
    int n_seeds = 10;
    std::uint64_t master_seed = 0;
    int workers = 0;  // 0: worker_count()

    void validate() const;
    /// Training config for one estimator: train, then its overrides.
    TrainConfig train_config_for(const std::string& estimator) const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string config_hash(const ExperimentConfig& cfg);

struct TrialResult {
    std::string estimator;
    std::string split;
    std::string metric;  // "upehe" or "wpehe"
    int K = 0;
    double kappa = 0.0;
    int seed = 0;
    double value = 0.0;
    double seconds = 0.0;
    std::string config_hash;
    std::string error;
};

/// Seed of the simulated benchmark for evaluation trial `seed`. Identical
/// across kappas so sweeps compare the same covariates, graphs and W.
std::uint64_t trial_sim_seed(std::uint64_t master_seed, int seed);

/// One evaluation trial at bias strength `kappa`.
std::vector<TrialResult> run_trial(const ExperimentConfig& cfg, int seed, double kappa);

using HpoObjective = std::function<double(const TrainConfig&)>;

/// Samples n_trials configs (the base config with sampled fields applied)
/// and returns the one with the lowest objective; ties go to the first.
/// Trials whose objective throws or is non-finite are skipped.
TrainConfig random_search_hpo(const HpoSpace& space, const TrainConfig& base, int n_trials, Rng& rng,
                              const HpoObjective& objective, std::vector<double>* scores = nullptr);

/// Validation-split outcome MSE of `estimator` trained on the rest of `data`.
double validation_outcome_mse(const std::string& estimator, const Dataset& data, const TrainConfig& cfg,
                              double validation_fraction, std::uint64_t split_seed);

std::unique_ptr<CateEstimator> train_estimator(const std::string& name, const Dataset& data, const TrainConfig& cfg,
                                               const Matrix* reference_embeddings = nullptr);

struct SummaryRow {
    std::string estimator;
    std::string split;
    std::string metric;
    int K = 0;
    double kappa = 0.0;
    int n = 0;        // finite values
    int n_nan = 0;    // excluded rows
    double mean = 0.0;
    double stderr_ = 0.0;
    bool single_seed = false;
};

std::vector<SummaryRow> aggregate(const std::vector<TrialResult>& results);

std::vector<TrialResult> kappa_sweep(const ExperimentConfig& cfg, const std::vector<double>& kappas,
                                     const std::optional<std::filesystem::path>& staging_dir = std::nullopt);

void write_results_csv(std::ostream& os, const std::vector<TrialResult>& rows, bool include_timing = true);
std::vector<TrialResult> read_results_csv(std::istream& is);
void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);

/// Runs the sweep over cfg.kappas (or sim.kappa) and writes results.csv,
/// summary.csv and config.lock.json into `out_dir`.
std::vector<TrialResult> run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace grd
