#pragma once

// CATE estimators for graph-valued treatments.
//
// Every estimator exposes a per-treatment score s(x, t) whose differences
// are its effect estimates, tau_hat(t', t, x) = s(x, t') - s(x, t). This
// makes tau_hat(t, t, x) = 0 and antisymmetry hold by construction.

#include "grd/graph_encoder.hpp"
#include "grd/nn.hpp"
#include "grd/simulation.hpp"

#include <nlohmann/json_fwd.hpp>

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace grd {

struct TrainConfig {
    // Architecture.
    int embed_dim = 16;      // d: width of g, h and e^h
    int cov_hidden = 64;     // covariate networks (g, baseline covariate tower)
    int cov_layers = 2;      // linear layers in g / covariate tower
    int cov_out = 16;        // baseline covariate representation width
    int treat_hidden = 16;   // graph encoder hidden width
    int gnn_rounds = 2;
    int m_hidden = 64;
    int m_layers = 3;
    int e_hidden = 32;
    int e_layers = 3;
    int head_hidden = 64;
    int head_layers = 2;

    // SIN stage 1 (mean outcome m).
    int stage1_epochs = 1000;
    int stage1_batch = 500;
    double lr_m = 1e-3;
    int patience_m = 10;

    // SIN stage 2 (g, h, e^h).
    int stage2_epochs = 300;
    int stage2_batch = 500;
    double lr_g = 1e-3;
    double lr_h = 1e-3;
    double lr_e = 1e-3;
    int inner_steps = 15;  // K
    int patience_ghe = 5;
    int e_steps = 1;            // Adam steps on J_{e^h} per minibatch
    int e_refit_epochs = 1000;  // e^h alone after J_{g,h} stops

    // Baselines (GNN, CAT, GraphITE).
    int epochs = 1000;
    int batch = 500;
    double lr = 1e-3;
    int patience = 10;
    double hsic_weight = 1.0;

    double l2 = 0.0;
    /// Divide outcomes by their standard deviation before training (they are
    /// always centered).
    bool standardize_y = false;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

class CateEstimator {
public:
    virtual ~CateEstimator() = default;
    virtual std::string name() const = 0;

    /// n x |treatments| matrix of s(x_i, treatments[j]).
    virtual Matrix treatment_scores(const Matrix& X, std::span<const int> treatments) const = 0;

    /// tau_hat(t', t, x); exactly 0 when t' == t.
    virtual double predict_cate(const Vector& x, int t_prime, int t) const;

    /// Predicted outcome E[Y | x, t] where the estimator models it (used for
    /// validation scoring). Throws std::logic_error otherwise.
    virtual Vector predict_outcome(const Matrix& X, std::span<const int> t) const;

    virtual nlohmann::json checkpoint() const;
};

/// Predicts no effect anywhere.
class ZeroEstimator final : public CateEstimator {
public:
    std::string name() const override { return "zero"; }
    Matrix treatment_scores(const Matrix& X, std::span<const int> treatments) const override;
    double predict_cate(const Vector&, int, int) const override { return 0.0; }
    nlohmann::json checkpoint() const override;
};

/// Scores with the noiseless simulated outcome; an oracle for testing the
/// evaluation pipeline.
class GroundTruthEstimator final : public CateEstimator {
public:
    explicit GroundTruthEstimator(std::shared_ptr<const GroundTruth> truth) : truth_(std::move(truth)) {}
    std::string name() const override { return "oracle"; }
    Matrix treatment_scores(const Matrix& X, std::span<const int> treatments) const override;
    double predict_cate(const Vector& x, int t_prime, int t) const override;
    Vector predict_outcome(const Matrix& X, std::span<const int> t) const override;

private:
    std::shared_ptr<const GroundTruth> truth_;
};

/// Distinct treatments of a dataset plus a batch for encoding them together.
struct TreatmentIndex {
    std::vector<int> ids;        // sorted distinct catalog ids
    std::vector<int> unit_rows;  // per unit, row into `ids`
    GraphBatch batch;

    TreatmentIndex() = default;
    TreatmentIndex(const TreatmentCatalog& catalog, std::span<const int> treatments);
};

// ---------------------------------------------------------------------------
// SIN: two-stage training of the generalized Robinson decomposition
//   Y - m(X) = g(X)^T (h(T) - e^h(X)) + eps.

struct Stage1Result {
    Mlp m;               // predicts standardized y
    double y_mean = 0.0;
    double y_scale = 1.0;
    std::vector<double> loss_history;  // per epoch, J_m on standardized y
};

struct Stage2Result {
    Mlp g;
    GraphEncoder h;
    Mlp e;
    double r_scale = 1.0;  // stage-2 targets are residuals / r_scale
    std::vector<double> gh_loss_history;  // per epoch, J_{g,h}
    std::vector<double> e_loss_history;   // per epoch, J_{e^h}, joint then refit
};

/// Fits m(x) = E[Y | x] by minibatch Adam on (x, y) only.
Stage1Result train_stage1(const Dataset& data, const TrainConfig& cfg);

/// Alternates K Adam steps on J_{g,h} (with m and e^h held fixed) and one
/// step on J_{e^h} (with h(T) held fixed as the regression target). Once
/// J_{g,h} stops improving, e^h is refit alone against the final h.
Stage2Result train_stage2(const Dataset& data, const Stage1Result& stage1, const TrainConfig& cfg);

class SinEstimator final : public CateEstimator {
public:
    SinEstimator(Stage1Result stage1, Stage2Result stage2, std::shared_ptr<const TreatmentCatalog> catalog,
                 TrainConfig cfg);

    std::string name() const override { return "sin"; }
    Matrix treatment_scores(const Matrix& X, std::span<const int> treatments) const override;
    /// g(x)^T (h(t') - h(t)), rescaled to outcome units.
    double predict_cate(const Vector& x, int t_prime, int t) const override;
    /// m(x) + g(x)^T (h(t) - e^h(x)).
    Vector predict_outcome(const Matrix& X, std::span<const int> t) const override;
    nlohmann::json checkpoint() const override;

    const Stage1Result& stage1() const { return stage1_; }
    const Stage2Result& stage2() const { return stage2_; }
    Matrix embed_treatments(std::span<const int> treatments) const;

private:
    Stage1Result stage1_;
    Stage2Result stage2_;
    std::shared_ptr<const TreatmentCatalog> catalog_;
    TrainConfig cfg_;
};

std::unique_ptr<SinEstimator> train_sin(const Dataset& data, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Outcome-regression baselines: f(x, t) = head([cov(x) | enc(t)]).

struct RegressionNets {
    Mlp cov;
    GraphEncoder enc;
    Mlp head;
    double y_mean = 0.0;
    double y_scale = 1.0;
};

struct RegressionTrace {
    std::vector<double> loss_history;   // per epoch, total training objective
    std::vector<double> hsic_history;   // per epoch, normalized HSIC term
};

/// GNN regression (hsic_weight = 0) and GraphITE (hsic_weight > 0) share
/// this estimator; only the objective differs.
class GraphRegressionEstimator final : public CateEstimator {
public:
    GraphRegressionEstimator(std::string name, RegressionNets nets, RegressionTrace trace,
                             std::shared_ptr<const TreatmentCatalog> catalog, TrainConfig cfg);

    std::string name() const override { return name_; }
    Matrix treatment_scores(const Matrix& X, std::span<const int> treatments) const override;
    Vector predict_outcome(const Matrix& X, std::span<const int> t) const override;
    nlohmann::json checkpoint() const override;

    /// Encoder embeddings of every catalog treatment (|T| x d).
    Matrix embedding_table() const;
    /// Covariate representations cov(x).
    Matrix covariate_representation(const Matrix& X) const;
    const RegressionNets& nets() const { return nets_; }
    const RegressionTrace& trace() const { return trace_; }

private:
    std::string name_;
    RegressionNets nets_;
    RegressionTrace trace_;
    std::shared_ptr<const TreatmentCatalog> catalog_;
    TrainConfig cfg_;
};

std::unique_ptr<GraphRegressionEstimator> train_gnn_regression(const Dataset& data, const TrainConfig& cfg);
/// Minimizes MSE + hsic_weight * hsic_normalized(enc(t_b), cov(x_b)) per minibatch.
std::unique_ptr<GraphRegressionEstimator> train_graphite(const Dataset& data, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// CAT: regression on [x | onehot(t)] over the training treatments. Other
// treatments are mapped to the nearest training treatment in a reference
// embedding space (the GNN baseline's encoder).

class CatEstimator final : public CateEstimator {
public:
    CatEstimator(Mlp net, std::vector<int> seen, std::vector<int> mapping, double y_mean, double y_scale,
                 TrainConfig cfg);

    std::string name() const override { return "cat"; }
    Matrix treatment_scores(const Matrix& X, std::span<const int> treatments) const override;
    Vector predict_outcome(const Matrix& X, std::span<const int> t) const override;
    nlohmann::json checkpoint() const override;

    /// Training treatment used in place of catalog treatment t.
    int mapped_treatment(int t) const { return seen_.at(static_cast<std::size_t>(mapping_.at(t))); }
    const std::vector<int>& seen_treatments() const { return seen_; }

private:
    Matrix one_hot_inputs(const Matrix& X, int column) const;

    Mlp net_;
    std::vector<int> seen_;     // sorted distinct training treatment ids
    std::vector<int> mapping_;  // catalog id -> index into seen_
    double y_mean_;
    double y_scale_;
    TrainConfig cfg_;
};

/// `reference_embeddings` has one row per catalog treatment.
std::unique_ptr<CatEstimator> train_cat(const Dataset& data, const TrainConfig& cfg,
                                        const Matrix& reference_embeddings);

/// For each catalog row, index of the nearest row among `seen` (ties broken
/// by the smaller seen index); seen treatments map to themselves.
std::vector<int> nearest_seen_mapping(const Matrix& embeddings, std::span<const int> seen);

// ---------------------------------------------------------------------------
// Loss builders, exposed for gradient checking.

namespace losses {

/// J_m = mean (y - m(x))^2.
ad::Var mean_outcome(const Mlp& m, std::span<const ad::Var> m_params, ad::Var x, ad::Var y);

/// J_{g,h} = mean (r - g(x)^T (h(t) - e_hat))^2 with r = y - m_hat(x).
/// `e_hat` is a constant (no gradient flows to e^h).
ad::Var sin_gh(const Mlp& g, std::span<const ad::Var> g_params, const GraphEncoder& h,
               std::span<const ad::Var> h_params, const GraphBatch& treatments, std::span<const int> unit_rows,
               ad::Var x, ad::Var residual, ad::Var e_hat);

/// J_{e^h} = mean over units of ||h_target - e(x)||^2 / d, the elementwise
/// MSE; `h_target` is a constant.
ad::Var sin_e(const Mlp& e, std::span<const ad::Var> e_params, ad::Var x, ad::Var h_target);

/// MSE(f(x,t), y) + hsic_weight * hsic_normalized(enc(t), cov(x)).
ad::Var graph_regression(const Mlp& cov, std::span<const ad::Var> cov_params, const GraphEncoder& enc,
                         std::span<const ad::Var> enc_params, const Mlp& head,
                         std::span<const ad::Var> head_params, const GraphBatch& treatments,
                         std::span<const int> unit_rows, ad::Var x, ad::Var y, double hsic_weight,
                         double* hsic_value = nullptr);

}  // namespace losses

/// Restores an estimator from checkpoint(); `catalog` must be the catalog
/// it was trained against.
std::unique_ptr<CateEstimator> load_checkpoint(const nlohmann::json& j,
                                               std::shared_ptr<const TreatmentCatalog> catalog);

}  // namespace grd
