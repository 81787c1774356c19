#include "grd/basis_rlearner.hpp"

#include "grd/parallel.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/legendre.hpp>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace grd {

namespace {

constexpr int kQuadraturePoints = 64;

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// Gauss-Legendre nodes and weights on [-1, 1].
const QuadratureRule& gauss_legendre() {
    static const QuadratureRule rule = [] {
        using G = boost::math::quadrature::gauss<double, kQuadraturePoints>;
        QuadratureRule r;
        const auto& a = G::abscissa();
        const auto& w = G::weights();
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] == 0.0) {
                r.nodes.push_back(0.0);
                r.weights.push_back(w[i]);
                continue;
            }
            r.nodes.push_back(a[i]);
            r.weights.push_back(w[i]);
            r.nodes.push_back(-a[i]);
            r.weights.push_back(w[i]);
        }
        return r;
    }();
    return rule;
}

// Unnormalized truncated-normal density weights at the quadrature nodes.
std::vector<double> conditional_weights(const ScalarDgp& dgp, double x, double& total) {
    const auto& q = gauss_legendre();
    const double mean = dgp.shift * x;
    std::vector<double> w(q.nodes.size());
    total = 0.0;
    for (std::size_t k = 0; k < q.nodes.size(); ++k) {
        const double z = (q.nodes[k] - mean) / dgp.treat_sd;
        w[k] = q.weights[k] * std::exp(-0.5 * z * z);
        total += w[k];
    }
    return w;
}

void check_theta(const Matrix& theta, const BasisSpec& basis) {
    if (theta.rows() != basis.d_alpha || theta.cols() != basis.d_beta) {
        throw ShapeError("theta must be " + std::to_string(basis.d_alpha) + "x" + std::to_string(basis.d_beta) +
                         ", got " + shape_string(theta));
    }
}

Vector vec(const Matrix& theta) { return Eigen::Map<const Vector>(theta.data(), theta.size()); }

Matrix unvec(const Vector& v, int rows, int cols) {
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

// Row-major vec(Theta) ordering: index a * d_beta + b.
void kron_into(const Vector& a, const Vector& b, Eigen::Ref<Eigen::RowVectorXd> out) {
    for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b.transpose();
}

}  // namespace

double normalized_legendre(int k, double x) {
    if (k < 0) throw std::invalid_argument("normalized_legendre: negative degree");
    return std::sqrt(2.0 * k + 1.0) * boost::math::legendre_p(k, x);
}

void BasisSpec::validate() const {
    if (d_alpha < 1 || d_beta < 1) throw std::invalid_argument("BasisSpec: dimensions must be positive");
}

Vector BasisSpec::alpha(double x) const {
    Vector out(d_alpha);
    for (int i = 0; i < d_alpha; ++i) out(i) = normalized_legendre(i, x);
    return out;
}

Vector BasisSpec::beta(double t) const {
    Vector out(d_beta);
    for (int j = 0; j < d_beta; ++j) out(j) = normalized_legendre(j + 1, t);
    return out;
}

double BasisSpec::bound() const {
    // |P_k| <= 1 on [-1, 1], attained at the endpoints.
    return std::sqrt(2.0 * std::max(d_alpha - 1, d_beta) + 1.0);
}

Vector ScalarDgp::propensity_features(double x) const {
    const auto& q = gauss_legendre();
    double total = 0.0;
    const auto w = conditional_weights(*this, x, total);
    Vector e = Vector::Zero(basis.d_beta);
    for (std::size_t k = 0; k < w.size(); ++k) e += w[k] * basis.beta(q.nodes[k]);
    return e / total;
}

Matrix ScalarDgp::propensity_covariance(double x) const {
    const auto& q = gauss_legendre();
    double total = 0.0;
    const auto w = conditional_weights(*this, x, total);
    Vector e = Vector::Zero(basis.d_beta);
    Matrix second = Matrix::Zero(basis.d_beta, basis.d_beta);
    for (std::size_t k = 0; k < w.size(); ++k) {
        const Vector b = basis.beta(q.nodes[k]);
        e += w[k] * b;
        second += w[k] * b * b.transpose();
    }
    e /= total;
    return second / total - e * e.transpose();
}

double ScalarDgp::mean_outcome(double x) const {
    return basis.alpha(x).dot(theta_star * propensity_features(x));
}

double ScalarDgp::noiseless_outcome(double x, double t) const {
    return basis.alpha(x).dot(theta_star * basis.beta(t));
}

ScalarDgp make_scalar_dgp(const BasisSpec& basis, Rng& rng, double noise_std) {
    basis.validate();
    ScalarDgp dgp;
    dgp.basis = basis;
    dgp.noise_std = noise_std;
    dgp.theta_star.resize(basis.d_alpha, basis.d_beta);
    for (Eigen::Index i = 0; i < dgp.theta_star.size(); ++i) dgp.theta_star.data()[i] = rng.normal();
    return dgp;
}

double sample_truncated_normal(Rng& rng, double mean, double sd, double lo, double hi) {
    if (!(lo < hi) || !(sd > 0.0)) throw std::invalid_argument("sample_truncated_normal: bad parameters");
    for (int attempt = 0; attempt < 1'000'000; ++attempt) {
        const double v = rng.normal(mean, sd);
        if (v >= lo && v <= hi) return v;
    }
    throw std::runtime_error("sample_truncated_normal: acceptance rate too low");
}

BasisSample sample_basis_data(const ScalarDgp& dgp, Rng& rng, int n, bool with_noise) {
    if (n < 1) throw std::invalid_argument("sample_basis_data: n must be positive");
    BasisSample s;
    s.x.resize(n);
    s.t.resize(n);
    s.y.resize(n);
    for (int i = 0; i < n; ++i) {
        s.x(i) = rng.uniform(-1.0, 1.0);
        s.t(i) = sample_truncated_normal(rng, dgp.shift * s.x(i), dgp.treat_sd, -1.0, 1.0);
        s.y(i) = dgp.noiseless_outcome(s.x(i), s.t(i)) + (with_noise ? rng.normal(0.0, dgp.noise_std) : 0.0);
    }
    return s;
}

double SmoothField::operator()(double x) const {
    double v = 0.0;
    for (std::size_t k = 0; k < amplitude.size(); ++k) v += amplitude[k] * std::sin(frequency[k] * x + phase[k]);
    return v;
}

SmoothField sample_smooth_field(Rng& rng, int terms) {
    if (terms < 1) throw std::invalid_argument("sample_smooth_field: need at least one term");
    SmoothField f;
    double total = 0.0;
    for (int k = 0; k < terms; ++k) {
        f.amplitude.push_back(rng.uniform(0.1, 1.0));
        f.frequency.push_back(std::numbers::pi * rng.uniform(0.5, 3.0));
        f.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
        total += f.amplitude.back();
    }
    for (auto& a : f.amplitude) a /= total;
    return f;
}

NuisancePair oracle_nuisances(const ScalarDgp& dgp) {
    return {[dgp](double x) { return dgp.mean_outcome(x); }, [dgp](double x) { return dgp.propensity_features(x); },
            "oracle"};
}

NuisancePair corrupted_nuisances(const ScalarDgp& dgp, double scale, Rng& rng) {
    const SmoothField xi_m = sample_smooth_field(rng);
    std::vector<SmoothField> xi_e;
    for (int j = 0; j < dgp.basis.d_beta; ++j) xi_e.push_back(sample_smooth_field(rng));
    return {[dgp, xi_m, scale](double x) { return dgp.mean_outcome(x) + scale * xi_m(x); },
            [dgp, xi_e, scale](double x) {
                Vector e = dgp.propensity_features(x);
                for (std::size_t j = 0; j < xi_e.size(); ++j) e(static_cast<Eigen::Index>(j)) += scale * xi_e[j](x);
                return e;
            },
            "rate:" + std::to_string(scale)};
}

RidgeDesign ridge_design(const BasisSpec& basis, const BasisSample& data, const NuisancePair& nuis) {
    const int n = data.size();
    RidgeDesign d;
    d.Z.resize(n, basis.d_alpha * basis.d_beta);
    d.r.resize(n);
    for (int i = 0; i < n; ++i) {
        const Vector e = nuis.e_hat(data.x(i));
        if (e.size() != basis.d_beta) throw ShapeError("e_hat output dimension must equal d_beta");
        kron_into(basis.alpha(data.x(i)), basis.beta(data.t(i)) - e, d.Z.row(i));
        d.r(i) = data.y(i) - nuis.m_hat(data.x(i));
    }
    return d;
}

double feasible_loss(const Matrix& theta, const BasisSpec& basis, const BasisSample& data,
                     const NuisancePair& nuis) {
    check_theta(theta, basis);
    if (data.size() == 0) throw std::invalid_argument("feasible_loss: empty sample");
    const RidgeDesign d = ridge_design(basis, data, nuis);
    return (d.r - d.Z * vec(theta)).squaredNorm() / data.size();
}

Matrix fit_theta(const BasisSpec& basis, const BasisSample& data, const NuisancePair& nuis, double lambda,
                 const FitOptions& opts) {
    basis.validate();
    if (data.size() < 1) throw std::invalid_argument("fit_theta: empty sample");
    if (lambda < 0.0) throw std::invalid_argument("fit_theta: penalty must be non-negative");
    const RidgeDesign d = ridge_design(basis, data, nuis);
    const double n = data.size();
    const auto p = d.Z.cols();
    const Matrix A = Matrix(d.Z.transpose() * d.Z) / n + lambda * Matrix::Identity(p, p);
    const Vector b = d.Z.transpose() * d.r / n;

    if (lambda == 0.0) {
        Eigen::FullPivLU<Matrix> lu(A);
        lu.setThreshold(1e-12);
        if (!lu.isInvertible()) {
            throw std::domain_error("fit_theta: singular design with lambda = 0; use a positive penalty");
        }
    }

    Vector theta;
    if (opts.solver == RidgeSolver::ClosedForm) {
        theta = A.ldlt().solve(b);
    } else {
        // Gradient of the objective is 2 (A theta - b); step 1/L with L = 2 lambda_max(A).
        Eigen::SelfAdjointEigenSolver<Matrix> eig(A, Eigen::EigenvaluesOnly);
        const double step = 1.0 / (2.0 * eig.eigenvalues().maxCoeff());
        theta = Vector::Zero(p);
        long it = 0;
        for (; it < opts.gd_max_iterations; ++it) {
            const Vector grad = 2.0 * (A * theta - b);
            if (grad.norm() < opts.gd_tolerance) break;
            theta -= step * grad;
        }
        if (it == opts.gd_max_iterations) throw NumericError("fit_theta: gradient descent did not converge");
    }
    if (!theta.allFinite()) throw NumericError("fit_theta: non-finite solution");
    return unvec(theta, basis.d_alpha, basis.d_beta);
}

RegretEvaluator::RegretEvaluator(const ScalarDgp& dgp, const BasisSample& eval)
    : d_alpha_(dgp.basis.d_alpha), d_beta_(dgp.basis.d_beta) {
    if (eval.size() == 0) throw std::invalid_argument("RegretEvaluator: empty evaluation sample");
    features_ = ridge_design(dgp.basis, eval, oracle_nuisances(dgp)).Z;
    moment_ = features_.transpose() * features_ / static_cast<double>(eval.size());
}

RegretEvaluator RegretEvaluator::population(const ScalarDgp& dgp) {
    RegretEvaluator r;
    r.d_alpha_ = dgp.basis.d_alpha;
    r.d_beta_ = dgp.basis.d_beta;
    const auto& q = gauss_legendre();
    const int p = r.d_alpha_ * r.d_beta_;
    r.moment_ = Matrix::Zero(p, p);
    for (std::size_t k = 0; k < q.nodes.size(); ++k) {
        const Vector a = dgp.basis.alpha(q.nodes[k]);
        const Matrix cov = dgp.propensity_covariance(q.nodes[k]);
        // x ~ U(-1, 1) has density 1/2.
        for (int i = 0; i < r.d_alpha_; ++i) {
            for (int j = 0; j < r.d_alpha_; ++j) {
                r.moment_.block(i * r.d_beta_, j * r.d_beta_, r.d_beta_, r.d_beta_) +=
                    0.5 * q.weights[k] * a(i) * a(j) * cov;
            }
        }
    }
    return r;
}

double RegretEvaluator::operator()(const Matrix& theta, const Matrix& theta_star) const {
    if (theta.rows() != d_alpha_ || theta.cols() != d_beta_ || theta_star.rows() != d_alpha_ ||
        theta_star.cols() != d_beta_) {
        throw ShapeError("regret: theta shape mismatch");
    }
    const Vector delta = vec(theta) - vec(theta_star);
    return delta.dot(moment_ * delta);
}

Vector RegretEvaluator::pointwise(const Matrix& theta, const Matrix& theta_star) const {
    if (features_.size() == 0) return Vector();
    const Vector delta = vec(theta) - vec(theta_star);
    return (features_ * delta).array().square().matrix();
}

std::vector<RegretRow> quasi_oracle_experiment(const QuasiOracleConfig& cfg) {
    cfg.basis.validate();
    if (cfg.n_grid.empty()) throw std::invalid_argument("quasi_oracle_experiment: empty n grid");
    if (cfg.n_seeds < 1) throw std::invalid_argument("quasi_oracle_experiment: need at least one seed");
    if (cfg.kappa_rate < 0.0) throw std::invalid_argument("quasi_oracle_experiment: kappa_rate must be >= 0");
    const std::uint64_t root = derive_seed(cfg.master_seed, "quasi_oracle");
    std::vector<std::vector<RegretRow>> per_seed(static_cast<std::size_t>(cfg.n_seeds));

    parallel_for(per_seed.size(), cfg.workers, [&](std::size_t s) {
        const std::uint64_t seed_root = derive_seed(root, static_cast<std::uint64_t>(s));
        Rng theta_rng(derive_seed(seed_root, "theta"));
        const ScalarDgp dgp = make_scalar_dgp(cfg.basis, theta_rng, cfg.noise_std);
        Rng eval_rng(derive_seed(seed_root, "eval"));
        const RegretEvaluator regret(dgp, sample_basis_data(dgp, eval_rng, cfg.n_eval, false));
        const NuisancePair oracle = oracle_nuisances(dgp);
        for (int n : cfg.n_grid) {
            Rng data_rng(derive_seed(seed_root, "data/" + std::to_string(n)));
            const BasisSample data = sample_basis_data(dgp, data_rng, n);
            // Same corruption fields at every n; only their scale shrinks.
            Rng field_rng(derive_seed(seed_root, "fields"));
            const NuisancePair feasible =
                corrupted_nuisances(dgp, std::pow(static_cast<double>(n), -cfg.kappa_rate), field_rng);
            const double lambda = cfg.penalty_c / std::sqrt(static_cast<double>(n));
            RegretRow row;
            row.n = n;
            row.seed = static_cast<int>(s);
            row.kappa_rate = cfg.kappa_rate;
            row.regret_oracle = regret(fit_theta(dgp.basis, data, oracle, lambda), dgp.theta_star);
            row.regret_feasible = regret(fit_theta(dgp.basis, data, feasible, lambda), dgp.theta_star);
            per_seed[s].push_back(row);
        }
    });

    std::vector<RegretRow> rows;
    for (const auto& block : per_seed) rows.insert(rows.end(), block.begin(), block.end());
    return rows;
}

void write_regret_csv(std::ostream& os, const std::vector<RegretRow>& rows) {
    os << "n,seed,kappa_rate,regret_oracle,regret_feasible\n";
    os.precision(17);
    for (const auto& r : rows) {
        os << r.n << ',' << r.seed << ',' << r.kappa_rate << ',' << r.regret_oracle << ',' << r.regret_feasible
           << '\n';
    }
}

double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("log_log_slope: need >= 2 paired points");
    const auto n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::domain_error("log_log_slope: values must be positive");
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace grd
