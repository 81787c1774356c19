#include "grd/simulation.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace grd {

std::string to_string(BenchmarkKind kind) {
    return kind == BenchmarkKind::SmallWorld ? "sw" : "molecular_surrogate";
}

std::string to_string(CovariateTransform t) {
    return t == CovariateTransform::Identity ? "identity" : "elementwise_square";
}

std::string to_string(Split split) { return split == Split::InSample ? "in" : "out"; }

BenchmarkKind benchmark_from_string(const std::string& s) {
    if (s == "sw" || s == "SW" || s == "small_world") return BenchmarkKind::SmallWorld;
    if (s == "molecular_surrogate" || s == "molecular" || s == "tcga_surrogate") {
        return BenchmarkKind::MolecularSurrogate;
    }
    throw std::invalid_argument("unknown benchmark '" + s + "'");
}

Split split_from_string(const std::string& s) {
    if (s == "in" || s == "in_sample") return Split::InSample;
    if (s == "out" || s == "out_sample") return Split::OutSample;
    throw std::invalid_argument("unknown split '" + s + "'");
}

void SimConfig::validate() const {
    if (n_in <= 0 || n_out <= 0 || n_treatments <= 0 || d_x <= 0) {
        throw std::invalid_argument("SimConfig: unit, treatment and covariate counts must be positive");
    }
    if (kappa < 0.0) throw std::invalid_argument("SimConfig: kappa must be non-negative");
    if (noise_std < 0.0) throw std::invalid_argument("SimConfig: noise_std must be non-negative");
    if (benchmark == BenchmarkKind::MolecularSurrogate && pca_dim > d_x) {
        throw std::invalid_argument("SimConfig: pca_dim exceeds d_x");
    }
}

SimConfig default_sim_config(BenchmarkKind kind) {
    SimConfig cfg;
    cfg.benchmark = kind;
    if (kind == BenchmarkKind::SmallWorld) {
        cfg.n_in = 500;
        cfg.n_out = 250;
        cfg.n_treatments = 50;
        cfg.d_x = 20;
        cfg.kappa = 10.0;
    } else {
        cfg.n_in = 1000;
        cfg.n_out = 500;
        cfg.n_treatments = 200;
        cfg.d_x = 128;
        cfg.kappa = 0.1;
    }
    return cfg;
}

int GroundTruth::n_treatments() const {
    return benchmark == BenchmarkKind::SmallWorld ? static_cast<int>(stats.size())
                                                  : static_cast<int>(properties.rows());
}

Vector GroundTruth::pca_coordinates(const Vector& x) const {
    return pca_basis.transpose() * (x - pca_mean);
}

double GroundTruth::baseline(const Vector& x) const { return v0.dot(x); }

double GroundTruth::noiseless_outcome(const Vector& x, int t) const {
    if (t < 0 || t >= n_treatments()) throw std::out_of_range("unknown treatment id " + std::to_string(t));
    if (benchmark == BenchmarkKind::SmallWorld) return sw_outcome(x, stats[t], *this, nullptr);
    return molecular_surrogate_outcome(x, pca_coordinates(x), properties.row(t).transpose(), *this, nullptr);
}

double GroundTruth::true_cate(const Vector& x, int t_prime, int t) const {
    const int n = n_treatments();
    if (t_prime < 0 || t_prime >= n || t < 0 || t >= n) {
        throw std::out_of_range("true_cate: unknown treatment id");
    }
    if (t_prime == t) return 0.0;
    if (benchmark == BenchmarkKind::SmallWorld) {
        const double nu_p = stats[t_prime].connectivity, nu = stats[t].connectivity;
        const double l_p = stats[t_prime].avg_shortest_path, l = stats[t].avg_shortest_path;
        return 0.2 * (nu_p * nu_p - nu * nu) * v_nu.dot(x) + (l_p - l) * v_l.dot(x);
    }
    const Vector dz = (properties.row(t_prime) - properties.row(t)).transpose();
    return 0.01 * dz.dot(pca_coordinates(x));
}

Vector PropensityModel::distribution(const Vector& x) const {
    if (x.size() != W.cols()) throw ShapeError("propensity: covariate dimension mismatch");
    if (!x.allFinite()) throw NumericError("propensity: non-finite covariates");
    const Vector phi = transform == CovariateTransform::ElementwiseSquare ? Vector(x.cwiseAbs2()) : x;
    Vector logits = kappa * (W * phi);
    logits.array() -= logits.maxCoeff();
    Vector p = logits.array().exp().matrix();
    p /= p.sum();
    return p;
}

Matrix PropensityModel::distribution(const Matrix& X) const {
    Matrix out(X.rows(), W.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out.row(i) = distribution(Vector(X.row(i).transpose())).transpose();
    return out;
}

Dataset Dataset::subset(std::span<const int> rows) const {
    Dataset out;
    out.split = split;
    out.catalog = catalog;
    out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
    out.y.resize(static_cast<Eigen::Index>(rows.size()));
    out.t.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(rows[i]);
        out.x.row(static_cast<Eigen::Index>(i)) = x.row(r);
        out.y(static_cast<Eigen::Index>(i)) = y(r);
        out.t.push_back(t.at(rows[i]));
    }
    return out;
}

void Dataset::validate() const {
    if (!catalog) throw std::invalid_argument("Dataset: missing treatment catalog");
    if (static_cast<Eigen::Index>(t.size()) != x.rows() || y.size() != x.rows()) {
        throw std::invalid_argument("Dataset: x, t, y lengths differ");
    }
    for (int ti : t) {
        if (ti < 0 || ti >= static_cast<int>(catalog->size())) {
            throw std::invalid_argument("Dataset: treatment id " + std::to_string(ti) + " outside catalog");
        }
    }
}

Vector sample_unit_vector(Rng& rng, int d) {
    if (d < 1) throw std::invalid_argument("sample_unit_vector: d must be >= 1");
    Vector u(d);
    do {
        for (int i = 0; i < d; ++i) u(i) = rng.uniform();
    } while (u.norm() == 0.0);
    return u / u.norm();
}

Matrix sample_covariates(Rng& rng, int n, int d) {
    Matrix x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);
    return x;
}

std::vector<int> assign_treatments(Rng& rng, const Matrix& propensities) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(propensities.rows()));
    for (Eigen::Index i = 0; i < propensities.rows(); ++i) {
        const auto row = propensities.row(i);
        out.push_back(static_cast<int>(rng.categorical(std::span<const double>(row.data(), row.size()))));
    }
    return out;
}

double sw_outcome(const Vector& x, const GraphStats& stats, const GroundTruth& gt, Rng* noise) {
    const double nu = stats.connectivity;
    double y = 100.0 * gt.v0.dot(x) + 0.2 * nu * nu * gt.v_nu.dot(x) + stats.avg_shortest_path * gt.v_l.dot(x);
    if (noise != nullptr) y += gt.noise_std * noise->normal();
    return y;
}

double molecular_surrogate_outcome(const Vector& x, const Vector& x_pca, const Vector& z, const GroundTruth& gt,
                                   Rng* noise) {
    if (z.size() != x_pca.size()) throw ShapeError("molecular_surrogate_outcome: z and x_pca dims differ");
    double y = 10.0 * gt.v0.dot(x) + 0.01 * z.dot(x_pca);
    if (noise != nullptr) y += gt.noise_std * noise->normal();
    return y;
}

PcaResult pca_project(const Matrix& X, int k) {
    const auto d = X.cols();
    if (k > d) throw std::invalid_argument("pca_project: k exceeds covariate dimension");
    if (X.rows() <= k) throw std::invalid_argument("pca_project: need more rows than components");
    PcaResult out;
    out.mean = X.colwise().mean().transpose();
    Matrix centered = X;
    centered.rowwise() -= out.mean.transpose();
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(X.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericError("pca_project: eigendecomposition failed");
    // Eigen returns ascending eigenvalues.
    out.eigenvalues = solver.eigenvalues().reverse();
    out.basis.resize(d, k);
    for (int j = 0; j < k; ++j) {
        Vector v = solver.eigenvectors().col(d - 1 - j);
        // Sign convention: largest-magnitude entry positive.
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        out.basis.col(j) = v;
    }
    out.projected = centered * out.basis;
    return out;
}

namespace {

// Low-rank Gaussian mixture standing in for gene-expression covariates.
Matrix sample_surrogate_covariates(Rng& structure, Rng& draws, int n, int d, int rank) {
    constexpr int kComponents = 3;
    Matrix means(kComponents, d);
    for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = structure.normal();
    Matrix loadings(rank, d);
    for (Eigen::Index i = 0; i < loadings.size(); ++i) {
        loadings.data()[i] = structure.normal() / std::sqrt(static_cast<double>(rank));
    }
    Matrix x(n, d);
    Vector latent(rank);
    for (int i = 0; i < n; ++i) {
        const auto c = static_cast<Eigen::Index>(draws.uniform_index(kComponents));
        for (int r = 0; r < rank; ++r) latent(r) = draws.normal();
        x.row(i) = means.row(c) + latent.transpose() * loadings;
        for (int j = 0; j < d; ++j) x(i, j) += 0.1 * draws.normal();
    }
    return x;
}

// Random connected "molecule": a random tree plus up to two ring closures.
// Node features are [degree centrality, z/10 + N(0, 0.05^2) per node], so the
// property vector is recoverable by a mean readout.
Graph sample_surrogate_molecule(Rng& rng, const Vector& z) {
    const int n = rng.uniform_int(4, 12);
    std::vector<Edge> edges;
    std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
    for (int v = 1; v < n; ++v) {
        const int parent = rng.uniform_int(0, v - 1);
        edges.emplace_back(parent, v);
        adj[parent][v] = adj[v][parent] = 1;
    }
    const int rings = rng.uniform_int(0, 2);
    for (int r = 0; r < rings; ++r) {
        const int a = rng.uniform_int(0, n - 1);
        const int b = rng.uniform_int(0, n - 1);
        if (a == b || adj[a][b]) continue;
        edges.emplace_back(a, b);
        adj[a][b] = adj[b][a] = 1;
    }
    const Graph shape = Graph::with_degree_centrality(n, edges);
    Matrix features(n, 1 + z.size());
    for (int v = 0; v < n; ++v) {
        features(v, 0) = shape.node_features()(v, 0);
        for (Eigen::Index j = 0; j < z.size(); ++j) features(v, 1 + j) = z(j) / 10.0 + 0.05 * rng.normal();
    }
    return Graph(n, shape.edges(), std::move(features));
}

}  // namespace

Benchmark build_benchmark(const SimConfig& cfg) {
    cfg.validate();
    const std::uint64_t root = cfg.master_seed;
    Benchmark out;
    out.config = cfg;

    auto truth = std::make_shared<GroundTruth>();
    truth->benchmark = cfg.benchmark;
    truth->noise_std = cfg.noise_std;
    {
        Rng rng(derive_seed(root, "ground_truth"));
        truth->v0 = sample_unit_vector(rng, cfg.d_x);
        if (cfg.benchmark == BenchmarkKind::SmallWorld) {
            truth->v_nu = sample_unit_vector(rng, cfg.d_x);
            truth->v_l = sample_unit_vector(rng, cfg.d_x);
        }
    }

    auto catalog = std::make_shared<TreatmentCatalog>();
    catalog->reserve(static_cast<std::size_t>(cfg.n_treatments));
    {
        Rng rng(derive_seed(root, "catalog"));
        if (cfg.benchmark == BenchmarkKind::SmallWorld) {
            for (int t = 0; t < cfg.n_treatments; ++t) {
                const WsParams params = sample_ws_params(rng);
                catalog->push_back(generate_watts_strogatz(rng, params));
                truth->stats.push_back(graph_statistics(catalog->back()));
            }
        } else {
            constexpr int kProperties = 8;
            truth->properties.resize(cfg.n_treatments, kProperties);
            for (int t = 0; t < cfg.n_treatments; ++t) {
                Vector z(kProperties);
                for (int j = 0; j < kProperties; ++j) z(j) = rng.uniform(0.0, 10.0);
                truth->properties.row(t) = z.transpose();
                catalog->push_back(sample_surrogate_molecule(rng, z));
            }
        }
    }

    Matrix x_in, x_out;
    {
        Rng rng_in(derive_seed(root, "covariates/in"));
        Rng rng_out(derive_seed(root, "covariates/out"));
        if (cfg.benchmark == BenchmarkKind::SmallWorld) {
            x_in = sample_covariates(rng_in, cfg.n_in, cfg.d_x);
            x_out = sample_covariates(rng_out, cfg.n_out, cfg.d_x);
        } else {
            // Both splits share the mixture structure, as two subsets of one population.
            Rng s1(derive_seed(root, "covariates/structure"));
            Rng s2(derive_seed(root, "covariates/structure"));
            x_in = sample_surrogate_covariates(s1, rng_in, cfg.n_in, cfg.d_x, cfg.surrogate_rank);
            x_out = sample_surrogate_covariates(s2, rng_out, cfg.n_out, cfg.d_x, cfg.surrogate_rank);
            Matrix all(cfg.n_in + cfg.n_out, cfg.d_x);
            all << x_in, x_out;
            const PcaResult pca = pca_project(all, cfg.pca_dim);
            truth->pca_basis = pca.basis;
            truth->pca_mean = pca.mean;
        }
    }

    {
        Rng rng(derive_seed(root, "propensity/W"));
        out.propensity.W.resize(cfg.n_treatments, cfg.d_x);
        for (Eigen::Index i = 0; i < out.propensity.W.size(); ++i) out.propensity.W.data()[i] = rng.uniform();
        out.propensity.kappa = cfg.kappa;
        out.propensity.transform = cfg.benchmark == BenchmarkKind::SmallWorld ? CovariateTransform::ElementwiseSquare
                                                                              : CovariateTransform::Identity;
    }

    auto make_split = [&](Matrix x, Split split, const char* tag) {
        Dataset ds;
        ds.split = split;
        ds.catalog = catalog;
        Rng assign(derive_seed(root, std::string("assign/") + tag));
        ds.t = assign_treatments(assign, out.propensity.distribution(x));
        Rng noise(derive_seed(root, std::string("noise/") + tag));
        ds.y.resize(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const Vector xi = x.row(i).transpose();
            ds.y(i) = truth->noiseless_outcome(xi, ds.t[static_cast<std::size_t>(i)]) + truth->noise_std * noise.normal();
        }
        ds.x = std::move(x);
        return ds;
    };
    out.in_sample = make_split(std::move(x_in), Split::InSample, "in");
    out.out_sample = make_split(std::move(x_out), Split::OutSample, "out");
    out.truth = std::move(truth);
    return out;
}

}  // namespace grd
