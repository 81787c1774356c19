#pragma once

#include "grd/graph.hpp"
#include "grd/rng.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace grd {

enum class BenchmarkKind { SmallWorld, MolecularSurrogate };
enum class CovariateTransform { Identity, ElementwiseSquare };
enum class Split { InSample, OutSample };

std::string to_string(BenchmarkKind kind);
std::string to_string(CovariateTransform t);
std::string to_string(Split split);
BenchmarkKind benchmark_from_string(const std::string& s);
Split split_from_string(const std::string& s);

using TreatmentCatalog = std::vector<Graph>;

struct SimConfig {
    BenchmarkKind benchmark = BenchmarkKind::SmallWorld;
    int n_in = 500;
    int n_out = 250;
    int n_treatments = 50;
    int d_x = 20;
    double kappa = 10.0;
    std::uint64_t master_seed = 0;
    double noise_std = 1.0;
    int pca_dim = 8;          // molecular surrogate only
    int surrogate_rank = 16;  // molecular surrogate only

    void validate() const;
};

/// Desk-scale defaults per benchmark.
SimConfig default_sim_config(BenchmarkKind kind);

/// Everything needed to compute noiseless outcomes and true effects. Kept
/// apart from Dataset so trainers never see it.
struct GroundTruth {
    BenchmarkKind benchmark = BenchmarkKind::SmallWorld;
    Vector v0;
    // Small-world fields.
    Vector v_nu;
    Vector v_l;
    std::vector<GraphStats> stats;  // per treatment
    // Molecular surrogate fields.
    Matrix properties;   // |T| x 8, z per treatment
    Matrix pca_basis;    // d_x x 8, orthonormal columns
    Vector pca_mean;     // d_x
    double noise_std = 1.0;

    int n_treatments() const;
    Vector pca_coordinates(const Vector& x) const;
    double baseline(const Vector& x) const;  // mu_0(x) = v0^T x
    double noiseless_outcome(const Vector& x, int t) const;
    /// E[Y | x, do(t_prime)] - E[Y | x, do(t)].
    double true_cate(const Vector& x, int t_prime, int t) const;
};

/// p(T | x) = softmax(kappa * W phi(x)).
struct PropensityModel {
    Matrix W;  // |T| x d_x, entries U[0,1]
    double kappa = 0.0;
    CovariateTransform transform = CovariateTransform::Identity;

    int n_treatments() const { return static_cast<int>(W.rows()); }
    Vector distribution(const Vector& x) const;
    /// One row per unit.
    Matrix distribution(const Matrix& X) const;
};

/// Observed units only: covariates, assigned treatment, outcome.
struct Dataset {
    Matrix x;
    std::vector<int> t;
    Vector y;
    Split split = Split::InSample;
    std::shared_ptr<const TreatmentCatalog> catalog;

    int n_units() const { return static_cast<int>(x.rows()); }
    int d_x() const { return static_cast<int>(x.cols()); }
    Dataset subset(std::span<const int> rows) const;
    void validate() const;
};

struct Benchmark {
    SimConfig config;
    Dataset in_sample;
    Dataset out_sample;
    std::shared_ptr<const GroundTruth> truth;
    PropensityModel propensity;

    const Dataset& split(Split s) const { return s == Split::InSample ? in_sample : out_sample; }
};

/// u ~ U(0,1)^d normalized to unit Euclidean norm.
Vector sample_unit_vector(Rng& rng, int d);
/// Entries i.i.d. U(-1, 1).
Matrix sample_covariates(Rng& rng, int n, int d);
/// Categorical draw per row of a row-stochastic matrix.
std::vector<int> assign_treatments(Rng& rng, const Matrix& propensities);

/// Y = 100 v0^T x + 0.2 nu^2 v_nu^T x + l v_l^T x + eps. Noiseless when
/// `noise` is null.
double sw_outcome(const Vector& x, const GraphStats& stats, const GroundTruth& gt, Rng* noise);
/// Y = 10 v0^T x + 0.01 z^T x_pca + eps. Noiseless when `noise` is null.
double molecular_surrogate_outcome(const Vector& x, const Vector& x_pca, const Vector& z,
                                   const GroundTruth& gt, Rng* noise);

struct PcaResult {
    Matrix basis;       // d x k
    Matrix projected;   // n x k
    Vector mean;        // d
    Vector eigenvalues; // all d covariance eigenvalues, descending
};

/// Top-k principal directions of the (1/(n-1)) centered covariance.
PcaResult pca_project(const Matrix& X, int k);

Benchmark build_benchmark(const SimConfig& cfg);

}  // namespace grd
