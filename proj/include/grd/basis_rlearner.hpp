#pragma once

// Fixed-basis penalized R-learner: f(x, t) = alpha(x)^T Theta beta(t) with
// scalar x, t in [-1, 1] and normalized Legendre bases.

#include "grd/autodiff.hpp"
#include "grd/rng.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace grd {

/// sqrt(2k + 1) P_k(x): orthonormal under the uniform law on [-1, 1].
double normalized_legendre(int k, double x);

struct BasisSpec {
    int d_alpha = 6;  // alpha_i = normalized Legendre of degree i, i = 0..d_alpha-1
    int d_beta = 6;   // beta_j = normalized Legendre of degree j, j = 1..d_beta

    Vector alpha(double x) const;
    Vector beta(double t) const;
    /// Uniform bound A on |alpha_i| and |beta_j| over [-1, 1].
    double bound() const;
    void validate() const;
};

/// Planted data-generating process. x ~ U(-1, 1); T | x is a normal with
/// mean shift * x and sd treat_sd truncated to [-1, 1];
/// Y = alpha(x)^T Theta* beta(T) + eps.
struct ScalarDgp {
    BasisSpec basis;
    Matrix theta_star;  // d_alpha x d_beta
    double noise_std = 1.0;
    double shift = 0.5;
    double treat_sd = 0.5;

    /// e(x) = E[beta(T) | x], 64-point Gauss-Legendre quadrature.
    Vector propensity_features(double x) const;
    /// Cov(beta(T) | x).
    Matrix propensity_covariance(double x) const;
    /// m(x) = E[Y | x] = alpha(x)^T Theta* e(x).
    double mean_outcome(double x) const;
    double noiseless_outcome(double x, double t) const;
};

ScalarDgp make_scalar_dgp(const BasisSpec& basis, Rng& rng, double noise_std = 1.0);

double sample_truncated_normal(Rng& rng, double mean, double sd, double lo, double hi);

struct BasisSample {
    Vector x;
    Vector t;
    Vector y;
    int size() const { return static_cast<int>(x.size()); }
};

BasisSample sample_basis_data(const ScalarDgp& dgp, Rng& rng, int n, bool with_noise = true);

/// sum_k a_k sin(w_k x + phi_k) with sum |a_k| <= 1, so sup |xi| <= 1.
struct SmoothField {
    std::vector<double> amplitude;
    std::vector<double> frequency;
    std::vector<double> phase;
    double operator()(double x) const;
};

SmoothField sample_smooth_field(Rng& rng, int terms = 4);

struct NuisancePair {
    std::function<double(double)> m_hat;
    std::function<Vector(double)> e_hat;
    std::string descriptor;  // "oracle" or "rate:<scale>"
};

NuisancePair oracle_nuisances(const ScalarDgp& dgp);
/// m_hat = m + scale * xi_m, e_hat = e + scale * xi_e with fields drawn from rng.
NuisancePair corrupted_nuisances(const ScalarDgp& dgp, double scale, Rng& rng);

/// (1/n) sum [(y - m_hat(x)) - alpha(x)^T Theta (beta(t) - e_hat(x))]^2.
double feasible_loss(const Matrix& theta, const BasisSpec& basis, const BasisSample& data,
                     const NuisancePair& nuis);

/// Rows alpha(x_i) kron (beta(t_i) - e_hat(x_i)) in row-major vec(Theta)
/// order, and targets y_i - m_hat(x_i).
struct RidgeDesign {
    Matrix Z;
    Vector r;
};
RidgeDesign ridge_design(const BasisSpec& basis, const BasisSample& data, const NuisancePair& nuis);

enum class RidgeSolver { ClosedForm, GradientDescent };

struct FitOptions {
    RidgeSolver solver = RidgeSolver::ClosedForm;
    double gd_tolerance = 1e-8;  // gradient norm
    long gd_max_iterations = 10'000'000;
};

/// argmin feasible_loss(Theta) + lambda ||Theta||_F^2. lambda = 0 with a
/// singular design throws std::domain_error.
Matrix fit_theta(const BasisSpec& basis, const BasisSample& data, const NuisancePair& nuis, double lambda,
                 const FitOptions& opts = {});

/// Excess risk L(Theta) - L(Theta*) = E[(alpha^T (Theta - Theta*) (beta - e))^2],
/// as a quadratic form in vec(Theta - Theta*).
class RegretEvaluator {
public:
    /// Monte-Carlo second moment over an evaluation sample with oracle e.
    RegretEvaluator(const ScalarDgp& dgp, const BasisSample& eval);
    /// Exact second moment by quadrature over x.
    static RegretEvaluator population(const ScalarDgp& dgp);

    double operator()(const Matrix& theta, const Matrix& theta_star) const;
    /// Per-point losses (alpha^T Delta (beta - e))^2 on the MC sample; empty
    /// for the population evaluator.
    Vector pointwise(const Matrix& theta, const Matrix& theta_star) const;
    const Matrix& moment() const { return moment_; }

private:
    RegretEvaluator() = default;
    Matrix moment_;
    Matrix features_;  // MC sample design (oracle nuisances)
    int d_alpha_ = 0;
    int d_beta_ = 0;
};

struct QuasiOracleConfig {
    std::vector<int> n_grid{500, 2000, 8000, 32000};
    double kappa_rate = 0.3;
    int n_seeds = 10;
    std::uint64_t master_seed = 0;
    double penalty_c = 0.05;  // lambda_n = c / sqrt(n)
    int n_eval = 50000;
    double noise_std = 1.0;
    BasisSpec basis;
    int workers = 1;
};

struct RegretRow {
    int n = 0;
    int seed = 0;
    double kappa_rate = 0.0;
    double regret_oracle = 0.0;
    double regret_feasible = 0.0;
};

std::vector<RegretRow> quasi_oracle_experiment(const QuasiOracleConfig& cfg);
void write_regret_csv(std::ostream& os, const std::vector<RegretRow>& rows);

double median(std::vector<double> v);
/// Least-squares slope of log(y) against log(x).
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace grd
