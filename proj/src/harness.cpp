#include "grd/harness.hpp"

#include "grd/dataset_io.hpp"
#include "grd/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace grd {

namespace {

const std::vector<std::string>& known_estimators() {
    static const std::vector<std::string> names{"zero", "cat", "gnn", "graphite", "sin"};
    return names;
}

bool is_known(const std::string& name) {
    const auto& k = known_estimators();
    return std::find(k.begin(), k.end(), name) != k.end();
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    return std::stod(s);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void check_range(const nlohmann::json& spec, const std::string& field) {
    if (!spec.is_object() || spec.size() != 1) {
        throw std::invalid_argument("hpo space '" + field + "': expected one of int/float/log_float/choice");
    }
    const auto& [kind, v] = *spec.items().begin();
    if (kind == "choice") {
        if (!v.is_array() || v.empty()) throw std::invalid_argument("hpo space '" + field + "': empty choice");
        return;
    }
    if (kind != "int" && kind != "float" && kind != "log_float") {
        throw std::invalid_argument("hpo space '" + field + "': unknown kind '" + kind + "'");
    }
    if (!v.is_array() || v.size() != 2 || v[0].get<double>() > v[1].get<double>()) {
        throw std::invalid_argument("hpo space '" + field + "': expected [lo, hi] with lo <= hi");
    }
    if (kind == "log_float" && v[0].get<double>() <= 0.0) {
        throw std::invalid_argument("hpo space '" + field + "': log range must be positive");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// HPO

void HpoSpace::validate() const {
    if (!ranges.is_object()) throw std::invalid_argument("hpo space must be an object");
    const nlohmann::json fields = to_json(TrainConfig{});
    for (const auto& [field, spec] : ranges.items()) {
        if (!fields.contains(field)) throw std::invalid_argument("hpo space: unknown field '" + field + "'");
        check_range(spec, field);
    }
}

nlohmann::json HpoSpace::sample(Rng& rng) const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [field, spec] : ranges.items()) {
        const auto& [kind, v] = *spec.items().begin();
        if (kind == "choice") {
            out[field] = v.at(rng.uniform_index(v.size()));
        } else if (kind == "int") {
            out[field] = rng.uniform_int(v[0].get<int>(), v[1].get<int>());
        } else if (kind == "float") {
            out[field] = rng.uniform(v[0].get<double>(), v[1].get<double>());
        } else {
            out[field] = std::exp(rng.uniform(std::log(v[0].get<double>()), std::log(v[1].get<double>())));
        }
    }
    return out;
}

bool HpoSpace::contains(const TrainConfig& cfg) const {
    const nlohmann::json values = to_json(cfg);
    for (const auto& [field, spec] : ranges.items()) {
        const auto& [kind, v] = *spec.items().begin();
        const auto& value = values.at(field);
        if (kind == "choice") {
            if (std::find(v.begin(), v.end(), value) == v.end()) return false;
        } else {
            const double x = value.get<double>();
            if (x < v[0].get<double>() || x > v[1].get<double>()) return false;
        }
    }
    return true;
}

TrainConfig random_search_hpo(const HpoSpace& space, const TrainConfig& base, int n_trials, Rng& rng,
                              const HpoObjective& objective, std::vector<double>* scores) {
    space.validate();
    if (n_trials < 1) throw std::invalid_argument("random_search_hpo: n_trials must be positive");
    std::optional<TrainConfig> best;
    double best_score = std::numeric_limits<double>::infinity();
    std::string last_error;
    for (int trial = 0; trial < n_trials; ++trial) {
        const TrainConfig candidate = train_config_from_json(space.sample(rng), base);
        double score = std::numeric_limits<double>::quiet_NaN();
        try {
            score = objective(candidate);
        } catch (const std::exception& e) {
            last_error = e.what();
        }
        if (scores != nullptr) scores->push_back(score);
        if (std::isfinite(score) && score < best_score) {
            best_score = score;
            best = candidate;
        }
    }
    if (!best) throw std::runtime_error("random_search_hpo: every trial failed" +
                                        (last_error.empty() ? std::string() : " (last: " + last_error + ")"));
    return *best;
}

std::unique_ptr<CateEstimator> train_estimator(const std::string& name, const Dataset& data, const TrainConfig& cfg,
                                               const Matrix* reference_embeddings) {
    if (name == "zero") return std::make_unique<ZeroEstimator>();
    if (name == "sin") return train_sin(data, cfg);
    if (name == "gnn") return train_gnn_regression(data, cfg);
    if (name == "graphite") return train_graphite(data, cfg);
    if (name == "cat") {
        if (reference_embeddings != nullptr) return train_cat(data, cfg, *reference_embeddings);
        const auto gnn = train_gnn_regression(data, cfg);
        return train_cat(data, cfg, gnn->embedding_table());
    }
    throw std::invalid_argument("unknown estimator '" + name + "'");
}

double validation_outcome_mse(const std::string& estimator, const Dataset& data, const TrainConfig& cfg,
                              double validation_fraction, std::uint64_t split_seed) {
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw std::invalid_argument("validation_fraction must lie in (0, 1)");
    }
    std::vector<int> rows(static_cast<std::size_t>(data.n_units()));
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng(split_seed);
    rng.shuffle(rows);
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(validation_fraction * rows.size())));
    if (n_val >= rows.size()) throw std::invalid_argument("validation split leaves no training units");
    const std::vector<int> val(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
    const std::vector<int> train(rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
    const Dataset train_set = data.subset(train);
    const Dataset val_set = data.subset(val);
    const auto est = train_estimator(estimator, train_set, cfg);
    const Vector pred = est->predict_outcome(val_set.x, val_set.t);
    return (pred - val_set.y).squaredNorm() / val_set.n_units();
}

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
    sim.validate();
    train.validate();
    if (estimators.empty()) throw std::invalid_argument("experiment: no estimators");
    for (const auto& e : estimators) {
        if (!is_known(e)) throw std::invalid_argument("experiment: unknown estimator '" + e + "'");
    }
    for (const auto& [name, _] : train_overrides) {
        if (!is_known(name)) throw std::invalid_argument("experiment: overrides for unknown estimator '" + name + "'");
        (void)train_config_for(name);
    }
    if (n_seeds < 1) throw std::invalid_argument("experiment: n_seeds must be >= 1");
    if (eval_ks.empty()) throw std::invalid_argument("experiment: no eval Ks");
    for (int k : eval_ks) {
        if (k < 2) throw std::invalid_argument("experiment: K must be >= 2");
    }
    for (double k : kappas) {
        if (!(k >= 0.0)) throw std::invalid_argument("experiment: kappas must be non-negative");
    }
    if (hpo.n_trials < 1) throw std::invalid_argument("experiment: hpo.n_trials must be >= 1");
    for (const auto& [name, space] : hpo.spaces) {
        if (!is_known(name)) throw std::invalid_argument("experiment: hpo space for unknown estimator '" + name + "'");
        space.validate();
    }
}

TrainConfig ExperimentConfig::train_config_for(const std::string& estimator) const {
    const auto it = train_overrides.find(estimator);
    if (it == train_overrides.end()) return train;
    return train_config_from_json(it->second, train);
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json overrides = nlohmann::json::object();
    for (const auto& [k, v] : cfg.train_overrides) overrides[k] = v;
    nlohmann::json spaces = nlohmann::json::object();
    for (const auto& [k, v] : cfg.hpo.spaces) spaces[k] = v.ranges;
    return {{"sim", to_json(cfg.sim)},
            {"estimators", cfg.estimators},
            {"train", to_json(cfg.train)},
            {"train_overrides", overrides},
            {"hpo",
             {{"enabled", cfg.hpo.enabled},
              {"n_trials", cfg.hpo.n_trials},
              {"validation_fraction", cfg.hpo.validation_fraction},
              {"spaces", spaces}}},
            {"eval_ks", cfg.eval_ks},
            {"kappas", cfg.kappas},
            {"n_seeds", cfg.n_seeds},
            {"master_seed", cfg.master_seed},
            {"workers", cfg.workers}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    static const char* known[] = {"benchmark", "sim",     "estimators", "train",       "train_overrides",
                                  "hpo",       "eval_ks", "kappas",     "n_seeds",     "master_seed",
                                  "workers"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
            throw std::invalid_argument("experiment config: unknown field '" + key + "'");
        }
    }
    ExperimentConfig cfg;
    BenchmarkKind kind = BenchmarkKind::SmallWorld;
    if (j.contains("benchmark")) kind = benchmark_from_string(j.at("benchmark").get<std::string>());
    if (j.contains("sim") && j.at("sim").contains("benchmark")) {
        kind = benchmark_from_string(j.at("sim").at("benchmark").get<std::string>());
    }
    cfg.sim = sim_config_from_json(j.value("sim", nlohmann::json::object()), default_sim_config(kind));
    if (j.contains("estimators")) cfg.estimators = j.at("estimators").get<std::vector<std::string>>();
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"), cfg.train);
    if (j.contains("train_overrides")) {
        for (const auto& [k, v] : j.at("train_overrides").items()) cfg.train_overrides[k] = v;
    }
    if (j.contains("hpo")) {
        const auto& h = j.at("hpo");
        cfg.hpo.enabled = h.value("enabled", false);
        cfg.hpo.n_trials = h.value("n_trials", 10);
        cfg.hpo.validation_fraction = h.value("validation_fraction", 0.2);
        if (h.contains("spaces")) {
            for (const auto& [k, v] : h.at("spaces").items()) cfg.hpo.spaces[k] = HpoSpace{v};
        }
    }
    if (j.contains("eval_ks")) cfg.eval_ks = j.at("eval_ks").get<std::vector<int>>();
    if (j.contains("kappas")) cfg.kappas = j.at("kappas").get<std::vector<double>>();
    if (j.contains("n_seeds")) cfg.n_seeds = j.at("n_seeds").get<int>();
    if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read config " + path.string());
    return experiment_config_from_json(nlohmann::json::parse(is));
}

std::string config_hash(const ExperimentConfig& cfg) {
    // Worker count does not change results.
    nlohmann::json j = to_json(cfg);
    j.erase("workers");
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(j.dump());
    return os.str();
}

// ---------------------------------------------------------------------------
// Trials

std::uint64_t trial_sim_seed(std::uint64_t master_seed, int seed) {
    return derive_seed(derive_seed(master_seed, "trial"), static_cast<std::uint64_t>(seed));
}

std::vector<TrialResult> run_trial(const ExperimentConfig& cfg, int seed, double kappa) {
    cfg.validate();
    SimConfig sim = cfg.sim;
    sim.kappa = kappa;
    sim.master_seed = trial_sim_seed(cfg.master_seed, seed);
    const Benchmark bench = build_benchmark(sim);
    const std::string hash = config_hash(cfg);
    const std::uint64_t train_seed = derive_seed(sim.master_seed, "train");
    const std::uint64_t hpo_root = derive_seed(derive_seed(cfg.master_seed, "hpo"), static_cast<std::uint64_t>(seed));

    auto resolve = [&](const std::string& name) {
        TrainConfig tc = cfg.train_config_for(name);
        tc.seed = train_seed;
        const auto space = cfg.hpo.spaces.find(name);
        if (cfg.hpo.enabled && name != "zero" && space != cfg.hpo.spaces.end() && !space->second.empty()) {
            Rng rng(derive_seed(hpo_root, "search/" + name));
            const std::uint64_t split_seed = derive_seed(hpo_root, "split");
            tc = random_search_hpo(space->second, tc, cfg.hpo.n_trials, rng, [&](const TrainConfig& c) {
                return validation_outcome_mse(name, bench.in_sample, c, cfg.hpo.validation_fraction, split_seed);
            });
        }
        return tc;
    };

    // CAT maps unseen treatments through the GNN baseline's embeddings.
    std::unique_ptr<GraphRegressionEstimator> gnn_model;
    double gnn_seconds = 0.0;
    std::string gnn_error;
    bool gnn_attempted = false;
    auto ensure_gnn = [&] {
        if (gnn_attempted) return;
        gnn_attempted = true;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            gnn_model = train_gnn_regression(bench.in_sample, resolve("gnn"));
        } catch (const std::exception& e) {
            gnn_error = e.what();
        }
        gnn_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    std::vector<TrialResult> rows;
    for (const auto& name : cfg.estimators) {
        std::vector<TrialResult> block;
        for (Split split : {Split::InSample, Split::OutSample}) {
            for (int K : cfg.eval_ks) {
                for (bool weighted : {false, true}) {
                    TrialResult r;
                    r.estimator = name;
                    r.split = to_string(split);
                    r.metric = weighted ? "wpehe" : "upehe";
                    r.K = K;
                    r.kappa = kappa;
                    r.seed = seed;
                    r.config_hash = hash;
                    block.push_back(r);
                }
            }
        }
        const auto t0 = std::chrono::steady_clock::now();
        double extra_seconds = 0.0;
        try {
            std::unique_ptr<CateEstimator> owned;
            const CateEstimator* est = nullptr;
            if (name == "gnn") {
                ensure_gnn();
                if (!gnn_model) throw std::runtime_error(gnn_error);
                est = gnn_model.get();
                extra_seconds = gnn_seconds;
            } else if (name == "cat") {
                ensure_gnn();
                if (!gnn_model) throw std::runtime_error("reference GNN failed: " + gnn_error);
                const Matrix table = gnn_model->embedding_table();
                owned = train_estimator(name, bench.in_sample, resolve(name), &table);
                est = owned.get();
            } else {
                owned = train_estimator(name, bench.in_sample, resolve(name));
                est = owned.get();
            }
            for (auto& r : block) {
                const Split split = split_from_string(r.split);
                const EvalConfig ec{r.K, r.metric == "wpehe", split};
                r.value = pehe_at_k(*est, bench.split(split), *bench.truth, bench.propensity, ec).value;
            }
        } catch (const std::exception& e) {
            for (auto& r : block) {
                r.value = std::numeric_limits<double>::quiet_NaN();
                r.error = e.what();
            }
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() + extra_seconds;
        for (auto& r : block) {
            r.seconds = seconds;
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Aggregation and IO

std::vector<SummaryRow> aggregate(const std::vector<TrialResult>& results) {
    std::vector<SummaryRow> out;
    std::vector<std::vector<double>> values;
    auto find = [&](const TrialResult& r) -> std::size_t {
        for (std::size_t i = 0; i < out.size(); ++i) {
            const auto& s = out[i];
            if (s.estimator == r.estimator && s.split == r.split && s.metric == r.metric && s.K == r.K &&
                s.kappa == r.kappa) {
                return i;
            }
        }
        SummaryRow s;
        s.estimator = r.estimator;
        s.split = r.split;
        s.metric = r.metric;
        s.K = r.K;
        s.kappa = r.kappa;
        out.push_back(s);
        values.emplace_back();
        return out.size() - 1;
    };
    for (const auto& r : results) {
        const std::size_t i = find(r);
        if (std::isfinite(r.value)) {
            values[i].push_back(r.value);
        } else {
            ++out[i].n_nan;
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& v = values[i];
        auto& s = out[i];
        s.n = static_cast<int>(v.size());
        if (v.empty()) {
            s.mean = s.stderr_ = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        if (v.size() == 1) {
            s.stderr_ = 0.0;
            s.single_seed = true;
            continue;
        }
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
        s.stderr_ = sd / std::sqrt(static_cast<double>(v.size()));
    }
    return out;
}

void write_results_csv(std::ostream& os, const std::vector<TrialResult>& rows, bool include_timing) {
    os << "estimator,split,metric,K,kappa,seed,value," << (include_timing ? "seconds," : "") << "config_hash,error\n";
    for (const auto& r : rows) {
        os << csv_escape(r.estimator) << ',' << r.split << ',' << r.metric << ',' << r.K << ','
           << format_double(r.kappa) << ',' << r.seed << ',' << format_double(r.value) << ',';
        if (include_timing) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", r.seconds);
            os << buf << ',';
        }
        os << r.config_hash << ',' << csv_escape(r.error) << '\n';
    }
}

std::vector<TrialResult> read_results_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("results csv: missing header");
    const auto header = csv_split(line);
    const bool timing = std::find(header.begin(), header.end(), "seconds") != header.end();
    std::vector<TrialResult> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = csv_split(line);
        if (f.size() != header.size()) throw std::runtime_error("results csv: wrong field count: " + line);
        TrialResult r;
        std::size_t i = 0;
        r.estimator = f[i++];
        r.split = f[i++];
        r.metric = f[i++];
        r.K = std::stoi(f[i++]);
        r.kappa = parse_double(f[i++]);
        r.seed = std::stoi(f[i++]);
        r.value = parse_double(f[i++]);
        if (timing) r.seconds = std::stod(f[i++]);
        r.config_hash = f[i++];
        r.error = f[i++];
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
    os << "estimator,split,metric,K,kappa,n,n_nan,mean,stderr,single_seed\n";
    for (const auto& s : rows) {
        os << csv_escape(s.estimator) << ',' << s.split << ',' << s.metric << ',' << s.K << ','
           << format_double(s.kappa) << ',' << s.n << ',' << s.n_nan << ',' << format_double(s.mean) << ','
           << format_double(s.stderr_) << ',' << (s.single_seed ? "true" : "false") << '\n';
    }
}

std::vector<TrialResult> kappa_sweep(const ExperimentConfig& cfg, const std::vector<double>& kappas,
                                     const std::optional<std::filesystem::path>& staging_dir) {
    cfg.validate();
    if (kappas.empty()) throw std::invalid_argument("kappa_sweep: no kappas");
    struct Cell {
        std::size_t kappa_index;
        int seed;
    };
    std::vector<Cell> cells;
    for (std::size_t k = 0; k < kappas.size(); ++k) {
        for (int s = 0; s < cfg.n_seeds; ++s) cells.push_back({k, s});
    }
    auto staging_file = [&](const Cell& c) {
        return *staging_dir / ("cell_k" + std::to_string(c.kappa_index) + "_s" + std::to_string(c.seed) + ".csv");
    };
    if (staging_dir) std::filesystem::create_directories(*staging_dir);

    std::vector<std::vector<TrialResult>> cell_rows(cells.size());
    const int workers = cfg.workers > 0 ? cfg.workers : worker_count();
    parallel_for(cells.size(), workers, [&](std::size_t i) {
        auto rows = run_trial(cfg, cells[i].seed, kappas[cells[i].kappa_index]);
        if (staging_dir) {
            std::ofstream os(staging_file(cells[i]));
            write_results_csv(os, rows);
            if (!os) throw std::runtime_error("cannot write staging file");
        } else {
            cell_rows[i] = std::move(rows);
        }
    });

    std::vector<TrialResult> merged;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (staging_dir) {
            const auto path = staging_file(cells[i]);
            std::vector<TrialResult> rows;
            {
                std::ifstream is(path);
                rows = read_results_csv(is);
            }
            std::filesystem::remove(path);
            merged.insert(merged.end(), rows.begin(), rows.end());
        } else {
            merged.insert(merged.end(), cell_rows[i].begin(), cell_rows[i].end());
        }
    }
    if (staging_dir && std::filesystem::is_empty(*staging_dir)) std::filesystem::remove(*staging_dir);
    return merged;
}

std::vector<TrialResult> run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    const std::vector<double> kappas = cfg.kappas.empty() ? std::vector<double>{cfg.sim.kappa} : cfg.kappas;

    nlohmann::json lock{{"schema_version", 1},
                        {"config", to_json(cfg)},
                        {"config_hash", config_hash(cfg)},
                        {"kappas", kappas},
                        {"workers", cfg.workers > 0 ? cfg.workers : worker_count()}};
    nlohmann::json seeds = nlohmann::json::array();
    for (int s = 0; s < cfg.n_seeds; ++s) {
        seeds.push_back({{"seed", s}, {"sim_seed", trial_sim_seed(cfg.master_seed, s)}});
    }
    lock["trial_seeds"] = seeds;
    {
        std::ofstream os(out_dir / "config.lock.json");
        os << lock.dump(2) << '\n';
    }

    const auto rows = kappa_sweep(cfg, kappas, out_dir / "staging");
    {
        std::ofstream os(out_dir / "results.csv");
        write_results_csv(os, rows);
    }
    std::ofstream os(out_dir / "summary.csv");
    write_summary_csv(os, aggregate(rows));
    return rows;
}

}  // namespace grd
