#include "grd/dataset_io.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace grd {

namespace {

nlohmann::json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json matrix_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
    return rows;
}

Matrix matrix_from(const nlohmann::json& j) {
    if (j.empty()) return Matrix();
    Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.at(0).size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const Vector row = vector_from(j.at(static_cast<std::size_t>(i)));
        if (row.size() != m.cols()) throw std::invalid_argument("ragged matrix in JSON");
        m.row(i) = row.transpose();
    }
    return m;
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    return os;
}

}  // namespace

nlohmann::json to_json(const SimConfig& cfg) {
    return {{"benchmark", to_string(cfg.benchmark)},
            {"n_in", cfg.n_in},
            {"n_out", cfg.n_out},
            {"n_treatments", cfg.n_treatments},
            {"d_x", cfg.d_x},
            {"kappa", cfg.kappa},
            {"master_seed", cfg.master_seed},
            {"noise_std", cfg.noise_std},
            {"pca_dim", cfg.pca_dim},
            {"surrogate_rank", cfg.surrogate_rank}};
}

SimConfig sim_config_from_json(const nlohmann::json& j, SimConfig base) {
    static const char* known[] = {"benchmark", "n_in",      "n_out",   "n_treatments",  "d_x",
                                  "kappa",     "master_seed", "noise_std", "pca_dim", "surrogate_rank"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
            throw std::invalid_argument("sim config: unknown field '" + key + "'");
        }
    }
    if (j.contains("benchmark")) base.benchmark = benchmark_from_string(j.at("benchmark").get<std::string>());
    if (j.contains("n_in")) base.n_in = j.at("n_in").get<int>();
    if (j.contains("n_out")) base.n_out = j.at("n_out").get<int>();
    if (j.contains("n_treatments")) base.n_treatments = j.at("n_treatments").get<int>();
    if (j.contains("d_x")) base.d_x = j.at("d_x").get<int>();
    if (j.contains("kappa")) base.kappa = j.at("kappa").get<double>();
    if (j.contains("master_seed")) base.master_seed = j.at("master_seed").get<std::uint64_t>();
    if (j.contains("noise_std")) base.noise_std = j.at("noise_std").get<double>();
    if (j.contains("pca_dim")) base.pca_dim = j.at("pca_dim").get<int>();
    if (j.contains("surrogate_rank")) base.surrogate_rank = j.at("surrogate_rank").get<int>();
    base.validate();
    return base;
}

void write_dataset(std::ostream& os, const Dataset& data, const nlohmann::json& metadata) {
    data.validate();
    nlohmann::json meta = metadata;
    meta["schema_version"] = kDatasetSchemaVersion;
    meta["split"] = to_string(data.split);
    meta["n_units"] = data.n_units();
    meta["d_x"] = data.d_x();
    meta["degree_centrality"] = "degree / (n - 1)";
    os << meta.dump() << '\n';

    nlohmann::json catalog = nlohmann::json::array();
    for (const auto& g : *data.catalog) catalog.push_back(graph_to_json(g));
    os << nlohmann::json{{"catalog", catalog}}.dump() << '\n';

    for (int i = 0; i < data.n_units(); ++i) {
        os << nlohmann::json{{"x", vector_json(data.x.row(i).transpose())},
                             {"t", data.t[static_cast<std::size_t>(i)]},
                             {"y", data.y(i)}}
                  .dump()
           << '\n';
    }
    if (!os) throw std::runtime_error("write_dataset: stream error");
}

Dataset read_dataset(std::istream& is, nlohmann::json* metadata) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("read_dataset: missing metadata line");
    const nlohmann::json meta = nlohmann::json::parse(line);
    if (meta.value("schema_version", 0) != kDatasetSchemaVersion) {
        throw std::runtime_error("read_dataset: unsupported schema_version");
    }
    if (!std::getline(is, line)) throw std::runtime_error("read_dataset: missing catalog line");
    const nlohmann::json cat = nlohmann::json::parse(line).at("catalog");
    auto catalog = std::make_shared<TreatmentCatalog>();
    for (const auto& g : cat) catalog->push_back(graph_from_json(g));

    std::vector<Vector> xs;
    Dataset d;
    std::vector<double> ys;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const nlohmann::json unit = nlohmann::json::parse(line);
        xs.push_back(vector_from(unit.at("x")));
        d.t.push_back(unit.at("t").get<int>());
        ys.push_back(unit.at("y").get<double>());
    }
    const int d_x = meta.at("d_x").get<int>();
    d.x.resize(static_cast<Eigen::Index>(xs.size()), d_x);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].size() != d_x) throw std::runtime_error("read_dataset: covariate width mismatch");
        d.x.row(static_cast<Eigen::Index>(i)) = xs[i].transpose();
    }
    d.y = Eigen::Map<const Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    d.split = split_from_string(meta.at("split").get<std::string>());
    d.catalog = std::move(catalog);
    if (d.n_units() != meta.at("n_units").get<int>()) throw std::runtime_error("read_dataset: unit count mismatch");
    d.validate();
    if (metadata != nullptr) *metadata = meta;
    return d;
}

nlohmann::json truth_to_json(const GroundTruth& truth, const PropensityModel& pm) {
    nlohmann::json stats = nlohmann::json::array();
    for (const auto& s : truth.stats) stats.push_back({{"connectivity", s.connectivity}, {"avg_shortest_path", s.avg_shortest_path}});
    return {{"schema_version", kDatasetSchemaVersion},
            {"benchmark", to_string(truth.benchmark)},
            {"v0", vector_json(truth.v0)},
            {"v_nu", vector_json(truth.v_nu)},
            {"v_l", vector_json(truth.v_l)},
            {"stats", stats},
            {"properties", matrix_json(truth.properties)},
            {"pca_basis", matrix_json(truth.pca_basis)},
            {"pca_mean", vector_json(truth.pca_mean)},
            {"noise_std", truth.noise_std},
            {"propensity",
             {{"W", matrix_json(pm.W)}, {"kappa", pm.kappa}, {"transform", to_string(pm.transform)}}}};
}

void truth_from_json(const nlohmann::json& j, GroundTruth& truth, PropensityModel& pm) {
    truth = GroundTruth{};
    truth.benchmark = benchmark_from_string(j.at("benchmark").get<std::string>());
    truth.v0 = vector_from(j.at("v0"));
    truth.v_nu = vector_from(j.at("v_nu"));
    truth.v_l = vector_from(j.at("v_l"));
    for (const auto& s : j.at("stats")) {
        truth.stats.push_back({s.at("connectivity").get<int>(), s.at("avg_shortest_path").get<double>()});
    }
    truth.properties = matrix_from(j.at("properties"));
    truth.pca_basis = matrix_from(j.at("pca_basis"));
    truth.pca_mean = vector_from(j.at("pca_mean"));
    truth.noise_std = j.at("noise_std").get<double>();
    const auto& p = j.at("propensity");
    pm.W = matrix_from(p.at("W"));
    pm.kappa = p.at("kappa").get<double>();
    pm.transform = p.at("transform").get<std::string>() == "identity" ? CovariateTransform::Identity
                                                                     : CovariateTransform::ElementwiseSquare;
}

void write_benchmark(const Benchmark& b, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta{{"config", to_json(b.config)}};
    if (b.config.benchmark == BenchmarkKind::MolecularSurrogate) meta["label"] = "surrogate";
    {
        auto os = open_out(dir / "in_sample.jsonl");
        write_dataset(os, b.in_sample, meta);
    }
    {
        auto os = open_out(dir / "out_sample.jsonl");
        write_dataset(os, b.out_sample, meta);
    }
    auto os = open_out(dir / "truth.json");
    os << truth_to_json(*b.truth, b.propensity).dump(1) << '\n';
}

}  // namespace grd
