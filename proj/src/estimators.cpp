#include "grd/estimators.hpp"

#include "grd/hsic.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace grd {

namespace {

constexpr int kCheckpointSchema = 1;

MlpConfig layered(int in, int hidden, int layers, int out, std::uint64_t seed) {
    MlpConfig cfg;
    cfg.layer_dims.push_back(in);
    for (int l = 1; l < layers; ++l) cfg.layer_dims.push_back(hidden);
    cfg.layer_dims.push_back(out);
    cfg.seed = seed;
    return cfg;
}

std::vector<std::vector<int>> minibatches(Rng& rng, int n, int batch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<int>> out;
    for (int start = 0; start < n; start += batch) {
        const int end = std::min(n, start + batch);
        out.emplace_back(order.begin() + start, order.begin() + end);
    }
    return out;
}

Matrix rows_of(const Matrix& m, std::span<const int> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

Matrix column_of(const Vector& v, std::span<const int> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), 1);
    for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i), 0) = v(rows[i]);
    return out;
}

struct Standardizer {
    double mean = 0.0;
    double scale = 1.0;
};

double spread(const Vector& v, double center) {
    const double var = (v.array() - center).square().sum() / std::max<double>(1.0, static_cast<double>(v.size()));
    return var > 0.0 ? std::sqrt(var) : 1.0;
}

Standardizer standardizer_for(const Vector& y, bool scale) {
    Standardizer s;
    s.mean = y.mean();
    if (scale) s.scale = spread(y, s.mean);
    return s;
}

void require_nonempty(const Dataset& data, const char* who) {
    data.validate();
    if (data.n_units() == 0) throw std::invalid_argument(std::string(who) + ": empty dataset");
}

void check_epoch_loss(double loss, const char* who, int epoch) {
    if (!std::isfinite(loss)) {
        throw NumericError(std::string(who) + ": non-finite training loss at epoch " + std::to_string(epoch));
    }
}

std::vector<Matrix> grads_of(const ad::Tape& tape, std::span<const ad::Var> vars) {
    std::vector<Matrix> out;
    out.reserve(vars.size());
    for (const auto& v : vars) out.push_back(tape.grad(v));
    return out;
}

template <typename T>
std::vector<T> concat(std::vector<T> a, const std::vector<T>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

// Minibatch view of the treatments: either the cached full-data index or a
// freshly built one for a subset of units.
struct BatchTreatments {
    const TreatmentIndex* index = nullptr;
    TreatmentIndex owned;

    BatchTreatments(const TreatmentIndex& full, const TreatmentCatalog& catalog, const std::vector<int>& t,
                    std::span<const int> rows, int n_units) {
        if (static_cast<int>(rows.size()) == n_units) {
            index = &full;
            // Rows are a permutation of the units; re-map through it.
            owned.unit_rows.resize(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) owned.unit_rows[i] = full.unit_rows[rows[i]];
        } else {
            std::vector<int> ts;
            ts.reserve(rows.size());
            for (int r : rows) ts.push_back(t[r]);
            owned = TreatmentIndex(catalog, ts);
            index = nullptr;
        }
    }
    const GraphBatch& batch() const { return index ? index->batch : owned.batch; }
    std::span<const int> unit_rows() const { return owned.unit_rows; }
};

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
    if (inner_steps < 1) throw std::invalid_argument("TrainConfig: inner_steps (K) must be >= 1");
    for (double lr_value : {lr_m, lr_g, lr_h, lr_e, lr}) {
        if (!(lr_value > 0.0)) throw std::invalid_argument("TrainConfig: learning rates must be positive");
    }
    for (int v : {embed_dim, e_steps, cov_hidden, cov_layers, cov_out, treat_hidden, gnn_rounds, m_hidden, m_layers,
                  e_hidden, e_layers, head_hidden, head_layers, stage1_batch, stage2_batch, batch}) {
        if (v < 1) throw std::invalid_argument("TrainConfig: sizes must be positive");
    }
    if (stage1_epochs < 1 || stage2_epochs < 1 || e_refit_epochs < 0 || epochs < 1) {
        throw std::invalid_argument("TrainConfig: epoch counts must be positive (e_refit_epochs may be 0)");
    }
    if (patience_m < 1 || patience_ghe < 1 || patience < 1) {
        throw std::invalid_argument("TrainConfig: patience must be positive");
    }
    if (hsic_weight < 0.0) throw std::invalid_argument("TrainConfig: hsic_weight must be non-negative");
    if (l2 < 0.0) throw std::invalid_argument("TrainConfig: l2 must be non-negative");
}

#define GRD_TRAIN_CONFIG_FIELDS(X)                                                                           \
    X(embed_dim) X(cov_hidden) X(cov_layers) X(cov_out) X(treat_hidden) X(gnn_rounds) X(m_hidden) X(m_layers) \
    X(e_hidden) X(e_layers) X(head_hidden) X(head_layers) X(stage1_epochs) X(stage1_batch) X(lr_m)            \
    X(patience_m) X(stage2_epochs) X(stage2_batch) X(lr_g) X(lr_h) X(lr_e) X(inner_steps) X(patience_ghe)      \
    X(e_steps) X(e_refit_epochs) X(epochs) X(batch) X(lr) X(patience) X(hsic_weight) X(l2) X(standardize_y) X(seed)

nlohmann::json to_json(const TrainConfig& cfg) {
    nlohmann::json j;
#define GRD_WRITE(field) j[#field] = cfg.field;
    GRD_TRAIN_CONFIG_FIELDS(GRD_WRITE)
#undef GRD_WRITE
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
    for (const auto& [key, _] : j.items()) {
        bool known = false;
#define GRD_KNOWN(field) known = known || key == #field;
        GRD_TRAIN_CONFIG_FIELDS(GRD_KNOWN)
#undef GRD_KNOWN
        if (!known) throw std::invalid_argument("train config: unknown field '" + key + "'");
    }
#define GRD_READ(field) \
    if (j.contains(#field)) base.field = j.at(#field).get<decltype(base.field)>();
    GRD_TRAIN_CONFIG_FIELDS(GRD_READ)
#undef GRD_READ
    base.validate();
    return base;
}

// ---------------------------------------------------------------------------
// CateEstimator

double CateEstimator::predict_cate(const Vector& x, int t_prime, int t) const {
    if (t_prime == t) return 0.0;
    const int ids[2] = {t_prime, t};
    const Matrix s = treatment_scores(x.transpose(), ids);
    return s(0, 0) - s(0, 1);
}

Vector CateEstimator::predict_outcome(const Matrix&, std::span<const int>) const {
    throw std::logic_error(name() + " does not model outcomes");
}

nlohmann::json CateEstimator::checkpoint() const {
    throw std::logic_error(name() + " has no checkpoint format");
}

Matrix ZeroEstimator::treatment_scores(const Matrix& X, std::span<const int> treatments) const {
    return Matrix::Zero(X.rows(), static_cast<Eigen::Index>(treatments.size()));
}

nlohmann::json ZeroEstimator::checkpoint() const {
    return {{"schema_version", kCheckpointSchema}, {"estimator", "zero"}};
}

Matrix GroundTruthEstimator::treatment_scores(const Matrix& X, std::span<const int> treatments) const {
    Matrix out(X.rows(), static_cast<Eigen::Index>(treatments.size()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const Vector x = X.row(i).transpose();
        for (std::size_t j = 0; j < treatments.size(); ++j) {
            out(i, static_cast<Eigen::Index>(j)) = truth_->noiseless_outcome(x, treatments[j]);
        }
    }
    return out;
}

double GroundTruthEstimator::predict_cate(const Vector& x, int t_prime, int t) const {
    return truth_->true_cate(x, t_prime, t);
}

Vector GroundTruthEstimator::predict_outcome(const Matrix& X, std::span<const int> t) const {
    Vector out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = truth_->noiseless_outcome(X.row(i).transpose(), t[i]);
    return out;
}

TreatmentIndex::TreatmentIndex(const TreatmentCatalog& catalog, std::span<const int> treatments) {
    ids.assign(treatments.begin(), treatments.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    unit_rows.reserve(treatments.size());
    for (int t : treatments) {
        unit_rows.push_back(static_cast<int>(std::lower_bound(ids.begin(), ids.end(), t) - ids.begin()));
    }
    if (!ids.empty()) batch = GraphBatch(catalog, ids);
}

// ---------------------------------------------------------------------------
// Losses

namespace losses {

ad::Var mean_outcome(const Mlp& m, std::span<const ad::Var> m_params, ad::Var x, ad::Var y) {
    return ad::mse(m.forward(x, m_params), y);
}

ad::Var sin_gh(const Mlp& g, std::span<const ad::Var> g_params, const GraphEncoder& h,
               std::span<const ad::Var> h_params, const GraphBatch& treatments, std::span<const int> unit_rows,
               ad::Var x, ad::Var residual, ad::Var e_hat) {
    ad::Tape& tape = *x.tape();
    const ad::Var h_all = h.encode(tape, treatments, h_params);
    const ad::Var h_units = ad::gather_rows(h_all, unit_rows);
    const ad::Var gx = g.forward(x, g_params);
    const ad::Var effect = ad::row_sum(ad::mul(gx, ad::sub(h_units, ad::detach(e_hat))));
    return ad::mse(effect, residual);
}

ad::Var sin_e(const Mlp& e, std::span<const ad::Var> e_params, ad::Var x, ad::Var h_target) {
    return ad::mse(e.forward(x, e_params), ad::detach(h_target));
}

ad::Var graph_regression(const Mlp& cov, std::span<const ad::Var> cov_params, const GraphEncoder& enc,
                         std::span<const ad::Var> enc_params, const Mlp& head,
                         std::span<const ad::Var> head_params, const GraphBatch& treatments,
                         std::span<const int> unit_rows, ad::Var x, ad::Var y, double hsic_weight,
                         double* hsic_value) {
    ad::Tape& tape = *x.tape();
    const ad::Var cx = cov.forward(x, cov_params);
    const ad::Var ht = ad::gather_rows(enc.encode(tape, treatments, enc_params), unit_rows);
    const ad::Var pred = head.forward(ad::concat_cols(cx, ht), head_params);
    ad::Var loss = ad::mse(pred, y);
    if (hsic_weight > 0.0) {
        const ad::Var dep = hsic_normalized(ht, cx);
        if (hsic_value != nullptr) *hsic_value = dep.value()(0, 0);
        loss = ad::add(loss, ad::scale(dep, hsic_weight));
    }
    return loss;
}

}  // namespace losses

// ---------------------------------------------------------------------------
// SIN

Stage1Result train_stage1(const Dataset& data, const TrainConfig& cfg) {
    require_nonempty(data, "train_stage1");
    cfg.validate();
    Stage1Result out;
    const Standardizer st = standardizer_for(data.y, cfg.standardize_y);
    out.y_mean = st.mean;
    out.y_scale = st.scale;
    const Vector y_std = (data.y.array() - st.mean) / st.scale;

    out.m = Mlp(layered(data.d_x(), cfg.m_hidden, cfg.m_layers, 1, derive_seed(cfg.seed, "sin/m")));
    const auto params = out.m.parameters();
    Adam opt(params, AdamOptions{cfg.lr_m, 0.9, 0.999, 1e-8, cfg.l2});
    Rng rng(derive_seed(cfg.seed, "sin/stage1/batches"));
    EarlyStopping stop(cfg.patience_m);
    std::vector<Matrix> best = snapshot(params);

    for (int epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
        double total = 0.0;
        for (const auto& rows : minibatches(rng, data.n_units(), cfg.stage1_batch)) {
            ad::Tape tape;
            const auto vars = out.m.bind(tape);
            const ad::Var loss = losses::mean_outcome(out.m, vars, tape.constant(rows_of(data.x, rows)),
                                                      tape.constant(column_of(y_std, rows)));
            tape.backward(loss);
            opt.step(grads_of(tape, vars));
            total += loss.value()(0, 0) * static_cast<double>(rows.size());
        }
        const double epoch_loss = total / data.n_units();
        check_epoch_loss(epoch_loss, "train_stage1", epoch);
        out.loss_history.push_back(epoch_loss);
        const bool halt = stop.update(epoch_loss);
        if (stop.improved()) best = snapshot(params);
        if (halt) break;
    }
    restore(params, best);
    return out;
}

Stage2Result train_stage2(const Dataset& data, const Stage1Result& stage1, const TrainConfig& cfg) {
    require_nonempty(data, "train_stage2");
    cfg.validate();
    if (stage1.m.in_dim() != data.d_x()) throw ShapeError("train_stage2: mean model input width mismatch");
    const auto& catalog = *data.catalog;
    const int d = cfg.embed_dim;

    Stage2Result out;
    out.g = Mlp(layered(data.d_x(), cfg.cov_hidden, cfg.cov_layers, d, derive_seed(cfg.seed, "sin/g")));
    out.e = Mlp(layered(data.d_x(), cfg.e_hidden, cfg.e_layers, d, derive_seed(cfg.seed, "sin/e")));
    out.h = GraphEncoder(GraphEncoderConfig{catalog.front().feature_dim(), cfg.treat_hidden, d, cfg.gnn_rounds,
                                            derive_seed(cfg.seed, "sin/h")});

    const Vector y_std = (data.y.array() - stage1.y_mean) / stage1.y_scale;
    const Matrix m_hat = stage1.m.forward(data.x);
    out.r_scale = spread(y_std - m_hat.col(0), 0.0);
    const Vector residual = (y_std - m_hat.col(0)) / out.r_scale;

    const auto g_params = out.g.parameters();
    const auto h_params = out.h.parameters();
    const auto e_params = out.e.parameters();
    Adam opt_g(g_params, AdamOptions{cfg.lr_g, 0.9, 0.999, 1e-8, cfg.l2});
    Adam opt_h(h_params, AdamOptions{cfg.lr_h, 0.9, 0.999, 1e-8, cfg.l2});
    Adam opt_e(e_params, AdamOptions{cfg.lr_e, 0.9, 0.999, 1e-8, cfg.l2});
    const auto all_params = concat(concat(g_params, h_params), e_params);

    const TreatmentIndex full(catalog, data.t);
    Rng rng(derive_seed(cfg.seed, "sin/stage2/batches"));
    EarlyStopping stop(cfg.patience_ghe);
    std::vector<Matrix> best = snapshot(all_params);

    auto e_step = [&](const BatchTreatments& bt, const Matrix& xb) {
        const Matrix h_target = out.h.encode(bt.batch());
        Matrix h_units(xb.rows(), d);
        for (Eigen::Index i = 0; i < xb.rows(); ++i) {
            h_units.row(i) = h_target.row(bt.unit_rows()[static_cast<std::size_t>(i)]);
        }
        ad::Tape tape;
        const auto ev = out.e.bind(tape);
        const ad::Var loss_e = losses::sin_e(out.e, ev, tape.constant(xb), tape.constant(h_units));
        tape.backward(loss_e);
        opt_e.step(grads_of(tape, ev));
        return loss_e.value()(0, 0);
    };

    for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        double gh_total = 0.0, e_total = 0.0;
        for (const auto& rows : minibatches(rng, data.n_units(), cfg.stage2_batch)) {
            const BatchTreatments bt(full, catalog, data.t, rows, data.n_units());
            const Matrix xb = rows_of(data.x, rows);
            const Matrix rb = column_of(residual, rows);
            const Matrix e_hat = out.e.forward(xb);

            for (int k = 0; k < cfg.inner_steps; ++k) {
                ad::Tape tape;
                const auto gv = out.g.bind(tape);
                const auto hv = out.h.bind(tape);
                const ad::Var loss = losses::sin_gh(out.g, gv, out.h, hv, bt.batch(), bt.unit_rows(),
                                                    tape.constant(xb), tape.constant(rb), tape.constant(e_hat));
                tape.backward(loss);
                opt_g.step(grads_of(tape, gv));
                opt_h.step(grads_of(tape, hv));
                if (k == 0) gh_total += loss.value()(0, 0) * static_cast<double>(rows.size());
            }

            double e_first = 0.0;
            for (int k = 0; k < cfg.e_steps; ++k) {
                const double l = e_step(bt, xb);
                if (k == 0) e_first = l;
            }
            e_total += e_first * static_cast<double>(rows.size());
        }
        const double gh_loss = gh_total / data.n_units();
        check_epoch_loss(gh_loss, "train_stage2", epoch);
        out.gh_loss_history.push_back(gh_loss);
        out.e_loss_history.push_back(e_total / data.n_units());
        const bool halt = stop.update(gh_loss);
        if (stop.improved()) best = snapshot(all_params);
        if (halt) break;
    }
    restore(all_params, best);

    // e^h keeps its own early stopping against the final h.
    EarlyStopping stop_e(cfg.patience_ghe);
    std::vector<Matrix> best_e = snapshot(e_params);
    for (int epoch = 0; epoch < cfg.e_refit_epochs; ++epoch) {
        double e_total = 0.0;
        for (const auto& rows : minibatches(rng, data.n_units(), cfg.stage2_batch)) {
            const BatchTreatments bt(full, catalog, data.t, rows, data.n_units());
            e_total += e_step(bt, rows_of(data.x, rows)) * static_cast<double>(rows.size());
        }
        const double e_loss = e_total / data.n_units();
        check_epoch_loss(e_loss, "train_stage2 (e)", epoch);
        out.e_loss_history.push_back(e_loss);
        const bool halt = stop_e.update(e_loss);
        if (stop_e.improved()) best_e = snapshot(e_params);
        if (halt) break;
    }
    restore(e_params, best_e);
    return out;
}

SinEstimator::SinEstimator(Stage1Result stage1, Stage2Result stage2, std::shared_ptr<const TreatmentCatalog> catalog,
                           TrainConfig cfg)
    : stage1_(std::move(stage1)), stage2_(std::move(stage2)), catalog_(std::move(catalog)), cfg_(cfg) {}

Matrix SinEstimator::embed_treatments(std::span<const int> treatments) const {
    return stage2_.h.encode(GraphBatch(*catalog_, treatments));
}

Matrix SinEstimator::treatment_scores(const Matrix& X, std::span<const int> treatments) const {
    if (treatments.empty()) return Matrix(X.rows(), 0);
    const Matrix gx = stage2_.g.forward(X);
    return stage1_.y_scale * stage2_.r_scale * (gx * embed_treatments(treatments).transpose());
}

double SinEstimator::predict_cate(const Vector& x, int t_prime, int t) const {
    if (t_prime == t) return 0.0;
    const int ids[2] = {t_prime, t};
    const Matrix h = embed_treatments(ids);
    const Matrix gx = stage2_.g.forward(x.transpose());
    if (gx.cols() != h.cols()) throw ShapeError("SinEstimator: g and h widths differ");
    return stage1_.y_scale * stage2_.r_scale * gx.row(0).dot(h.row(0) - h.row(1));
}

Vector SinEstimator::predict_outcome(const Matrix& X, std::span<const int> t) const {
    if (static_cast<Eigen::Index>(t.size()) != X.rows()) throw ShapeError("predict_outcome: x and t lengths differ");
    const TreatmentIndex index(*catalog_, t);
    const Matrix h = stage2_.h.encode(index.batch);
    const Matrix gx = stage2_.g.forward(X);
    const Matrix ex = stage2_.e.forward(X);
    const Matrix m = stage1_.m.forward(X);
    Vector out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double effect = gx.row(i).dot(h.row(index.unit_rows[static_cast<std::size_t>(i)]) - ex.row(i));
        out(i) = stage1_.y_mean + stage1_.y_scale * (m(i, 0) + stage2_.r_scale * effect);
    }
    return out;
}

nlohmann::json SinEstimator::checkpoint() const {
    nlohmann::json j;
    j["schema_version"] = kCheckpointSchema;
    j["estimator"] = "sin";
    j["config"] = to_json(cfg_);
    j["y_mean"] = stage1_.y_mean;
    j["y_scale"] = stage1_.y_scale;
    j["r_scale"] = stage2_.r_scale;
    j["submodels"] = {{"m", mlp_to_json(stage1_.m)},
                      {"g", mlp_to_json(stage2_.g)},
                      {"e", mlp_to_json(stage2_.e)},
                      {"h", encoder_to_json(stage2_.h)}};
    return j;
}

std::unique_ptr<SinEstimator> train_sin(const Dataset& data, const TrainConfig& cfg) {
    Stage1Result s1 = train_stage1(data, cfg);
    Stage2Result s2 = train_stage2(data, s1, cfg);
    return std::make_unique<SinEstimator>(std::move(s1), std::move(s2), data.catalog, cfg);
}

// ---------------------------------------------------------------------------
// GNN regression and GraphITE

namespace {

std::unique_ptr<GraphRegressionEstimator> train_graph_regression(const Dataset& data, const TrainConfig& cfg,
                                                                 double hsic_weight, std::string name) {
    require_nonempty(data, name.c_str());
    cfg.validate();
    const auto& catalog = *data.catalog;
    RegressionNets nets;
    RegressionTrace trace;
    const Standardizer st = standardizer_for(data.y, cfg.standardize_y);
    nets.y_mean = st.mean;
    nets.y_scale = st.scale;
    const Vector y_std = (data.y.array() - st.mean) / st.scale;

    // Seeds do not depend on the estimator name: GraphITE with weight 0
    // follows the GNN trajectory exactly.
    nets.cov = Mlp(layered(data.d_x(), cfg.cov_hidden, cfg.cov_layers, cfg.cov_out, derive_seed(cfg.seed, "reg/cov")));
    nets.enc = GraphEncoder(GraphEncoderConfig{catalog.front().feature_dim(), cfg.treat_hidden, cfg.embed_dim,
                                               cfg.gnn_rounds, derive_seed(cfg.seed, "reg/enc")});
    nets.head = Mlp(layered(cfg.cov_out + cfg.embed_dim, cfg.head_hidden, cfg.head_layers, 1,
                            derive_seed(cfg.seed, "reg/head")));

    const auto cov_p = nets.cov.parameters();
    const auto enc_p = nets.enc.parameters();
    const auto head_p = nets.head.parameters();
    const auto all_params = concat(concat(cov_p, enc_p), head_p);
    Adam opt(all_params, AdamOptions{cfg.lr, 0.9, 0.999, 1e-8, cfg.l2});

    const TreatmentIndex full(catalog, data.t);
    Rng rng(derive_seed(cfg.seed, "reg/batches"));
    EarlyStopping stop(cfg.patience);
    std::vector<Matrix> best = snapshot(all_params);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double total = 0.0, hsic_total = 0.0;
        for (const auto& rows : minibatches(rng, data.n_units(), cfg.batch)) {
            const BatchTreatments bt(full, catalog, data.t, rows, data.n_units());
            ad::Tape tape;
            const auto cv = nets.cov.bind(tape);
            const auto ev = nets.enc.bind(tape);
            const auto hv = nets.head.bind(tape);
            // HSIC needs at least 4 rows; smaller trailing batches skip it.
            const double weight = rows.size() >= 4 ? hsic_weight : 0.0;
            double dep = 0.0;
            const ad::Var loss = losses::graph_regression(
                nets.cov, cv, nets.enc, ev, nets.head, hv, bt.batch(), bt.unit_rows(),
                tape.constant(rows_of(data.x, rows)), tape.constant(column_of(y_std, rows)), weight, &dep);
            tape.backward(loss);
            opt.step(concat(concat(grads_of(tape, cv), grads_of(tape, ev)), grads_of(tape, hv)));
            total += loss.value()(0, 0) * static_cast<double>(rows.size());
            hsic_total += dep * static_cast<double>(rows.size());
        }
        const double epoch_loss = total / data.n_units();
        check_epoch_loss(epoch_loss, name.c_str(), epoch);
        trace.loss_history.push_back(epoch_loss);
        trace.hsic_history.push_back(hsic_total / data.n_units());
        const bool halt = stop.update(epoch_loss);
        if (stop.improved()) best = snapshot(all_params);
        if (halt) break;
    }
    restore(all_params, best);
    return std::make_unique<GraphRegressionEstimator>(std::move(name), std::move(nets), std::move(trace),
                                                      data.catalog, cfg);
}

}  // namespace

GraphRegressionEstimator::GraphRegressionEstimator(std::string name, RegressionNets nets, RegressionTrace trace,
                                                   std::shared_ptr<const TreatmentCatalog> catalog, TrainConfig cfg)
    : name_(std::move(name)), nets_(std::move(nets)), trace_(std::move(trace)), catalog_(std::move(catalog)),
      cfg_(cfg) {}

Matrix GraphRegressionEstimator::treatment_scores(const Matrix& X, std::span<const int> treatments) const {
    Matrix out(X.rows(), static_cast<Eigen::Index>(treatments.size()));
    if (treatments.empty()) return out;
    const Matrix cx = nets_.cov.forward(X);
    const Matrix h = nets_.enc.encode(GraphBatch(*catalog_, treatments));
    Matrix joined(X.rows(), cx.cols() + h.cols());
    joined.leftCols(cx.cols()) = cx;
    for (std::size_t j = 0; j < treatments.size(); ++j) {
        joined.rightCols(h.cols()) = h.row(static_cast<Eigen::Index>(j)).replicate(X.rows(), 1);
        out.col(static_cast<Eigen::Index>(j)) = nets_.head.forward(joined).col(0);
    }
    return nets_.y_scale * out;
}

Vector GraphRegressionEstimator::predict_outcome(const Matrix& X, std::span<const int> t) const {
    if (static_cast<Eigen::Index>(t.size()) != X.rows()) throw ShapeError("predict_outcome: x and t lengths differ");
    const TreatmentIndex index(*catalog_, t);
    const Matrix cx = nets_.cov.forward(X);
    const Matrix h = nets_.enc.encode(index.batch);
    Matrix joined(X.rows(), cx.cols() + h.cols());
    joined.leftCols(cx.cols()) = cx;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        joined.row(i).tail(h.cols()) = h.row(index.unit_rows[static_cast<std::size_t>(i)]);
    }
    return (nets_.y_mean + nets_.y_scale * nets_.head.forward(joined).col(0).array()).matrix();
}

Matrix GraphRegressionEstimator::embedding_table() const {
    std::vector<int> all(catalog_->size());
    std::iota(all.begin(), all.end(), 0);
    return nets_.enc.encode(GraphBatch(*catalog_, all));
}

Matrix GraphRegressionEstimator::covariate_representation(const Matrix& X) const { return nets_.cov.forward(X); }

nlohmann::json GraphRegressionEstimator::checkpoint() const {
    nlohmann::json j;
    j["schema_version"] = kCheckpointSchema;
    j["estimator"] = name_;
    j["config"] = to_json(cfg_);
    j["y_mean"] = nets_.y_mean;
    j["y_scale"] = nets_.y_scale;
    j["submodels"] = {{"cov", mlp_to_json(nets_.cov)},
                      {"enc", encoder_to_json(nets_.enc)},
                      {"head", mlp_to_json(nets_.head)}};
    return j;
}

std::unique_ptr<GraphRegressionEstimator> train_gnn_regression(const Dataset& data, const TrainConfig& cfg) {
    return train_graph_regression(data, cfg, 0.0, "gnn");
}

std::unique_ptr<GraphRegressionEstimator> train_graphite(const Dataset& data, const TrainConfig& cfg) {
    return train_graph_regression(data, cfg, cfg.hsic_weight, "graphite");
}

// ---------------------------------------------------------------------------
// CAT

std::vector<int> nearest_seen_mapping(const Matrix& embeddings, std::span<const int> seen) {
    if (seen.empty()) throw std::invalid_argument("nearest_seen_mapping: empty treatment table");
    std::vector<int> mapping(static_cast<std::size_t>(embeddings.rows()));
    for (Eigen::Index t = 0; t < embeddings.rows(); ++t) {
        const auto hit = std::find(seen.begin(), seen.end(), static_cast<int>(t));
        if (hit != seen.end()) {
            mapping[static_cast<std::size_t>(t)] = static_cast<int>(hit - seen.begin());
            continue;
        }
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t s = 0; s < seen.size(); ++s) {
            const double dist = (embeddings.row(t) - embeddings.row(seen[s])).squaredNorm();
            if (dist < best) {
                best = dist;
                arg = static_cast<int>(s);
            }
        }
        mapping[static_cast<std::size_t>(t)] = arg;
    }
    return mapping;
}

CatEstimator::CatEstimator(Mlp net, std::vector<int> seen, std::vector<int> mapping, double y_mean, double y_scale,
                           TrainConfig cfg)
    : net_(std::move(net)), seen_(std::move(seen)), mapping_(std::move(mapping)), y_mean_(y_mean), y_scale_(y_scale),
      cfg_(cfg) {
    if (seen_.empty()) throw std::invalid_argument("CatEstimator: empty treatment table");
}

Matrix CatEstimator::one_hot_inputs(const Matrix& X, int column) const {
    const auto width = static_cast<Eigen::Index>(seen_.size());
    Matrix in = Matrix::Zero(X.rows(), X.cols() + width);
    in.leftCols(X.cols()) = X;
    in.col(X.cols() + column).setOnes();
    return in;
}

Matrix CatEstimator::treatment_scores(const Matrix& X, std::span<const int> treatments) const {
    Matrix out(X.rows(), static_cast<Eigen::Index>(treatments.size()));
    for (std::size_t j = 0; j < treatments.size(); ++j) {
        const int column = mapping_.at(static_cast<std::size_t>(treatments[j]));
        out.col(static_cast<Eigen::Index>(j)) = net_.forward(one_hot_inputs(X, column)).col(0);
    }
    return y_scale_ * out;
}

Vector CatEstimator::predict_outcome(const Matrix& X, std::span<const int> t) const {
    if (static_cast<Eigen::Index>(t.size()) != X.rows()) throw ShapeError("predict_outcome: x and t lengths differ");
    Matrix in = Matrix::Zero(X.rows(), X.cols() + static_cast<Eigen::Index>(seen_.size()));
    in.leftCols(X.cols()) = X;
    for (Eigen::Index i = 0; i < X.rows(); ++i) in(i, X.cols() + mapping_.at(t[i])) = 1.0;
    return (y_mean_ + y_scale_ * net_.forward(in).col(0).array()).matrix();
}

nlohmann::json CatEstimator::checkpoint() const {
    nlohmann::json j;
    j["schema_version"] = kCheckpointSchema;
    j["estimator"] = "cat";
    j["config"] = to_json(cfg_);
    j["y_mean"] = y_mean_;
    j["y_scale"] = y_scale_;
    j["seen"] = seen_;
    j["mapping"] = mapping_;
    j["submodels"] = {{"net", mlp_to_json(net_)}};
    return j;
}

std::unique_ptr<CatEstimator> train_cat(const Dataset& data, const TrainConfig& cfg, const Matrix& reference_embeddings) {
    require_nonempty(data, "train_cat");
    cfg.validate();
    if (reference_embeddings.rows() != static_cast<Eigen::Index>(data.catalog->size())) {
        throw std::invalid_argument("train_cat: reference embedding table must cover the catalog");
    }
    const TreatmentIndex seen(*data.catalog, data.t);
    std::vector<int> mapping = nearest_seen_mapping(reference_embeddings, seen.ids);
    const auto width = static_cast<int>(seen.ids.size());

    const Standardizer st = standardizer_for(data.y, cfg.standardize_y);
    const Vector y_std = (data.y.array() - st.mean) / st.scale;
    Matrix inputs = Matrix::Zero(data.n_units(), data.d_x() + width);
    inputs.leftCols(data.d_x()) = data.x;
    for (int i = 0; i < data.n_units(); ++i) inputs(i, data.d_x() + seen.unit_rows[static_cast<std::size_t>(i)]) = 1.0;

    Mlp net(layered(data.d_x() + width, cfg.head_hidden, cfg.head_layers + 1, 1, derive_seed(cfg.seed, "cat/net")));
    const auto params = net.parameters();
    Adam opt(params, AdamOptions{cfg.lr, 0.9, 0.999, 1e-8, cfg.l2});
    Rng rng(derive_seed(cfg.seed, "cat/batches"));
    EarlyStopping stop(cfg.patience);
    std::vector<Matrix> best = snapshot(params);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double total = 0.0;
        for (const auto& rows : minibatches(rng, data.n_units(), cfg.batch)) {
            ad::Tape tape;
            const auto vars = net.bind(tape);
            const ad::Var loss = losses::mean_outcome(net, vars, tape.constant(rows_of(inputs, rows)),
                                                      tape.constant(column_of(y_std, rows)));
            tape.backward(loss);
            opt.step(grads_of(tape, vars));
            total += loss.value()(0, 0) * static_cast<double>(rows.size());
        }
        const double epoch_loss = total / data.n_units();
        check_epoch_loss(epoch_loss, "train_cat", epoch);
        const bool halt = stop.update(epoch_loss);
        if (stop.improved()) best = snapshot(params);
        if (halt) break;
    }
    restore(params, best);
    return std::make_unique<CatEstimator>(std::move(net), seen.ids, std::move(mapping), st.mean, st.scale, cfg);
}

// ---------------------------------------------------------------------------
// Checkpoints

std::unique_ptr<CateEstimator> load_checkpoint(const nlohmann::json& j, std::shared_ptr<const TreatmentCatalog> catalog) {
    const int version = j.at("schema_version").get<int>();
    if (version != kCheckpointSchema) {
        throw std::invalid_argument("load_checkpoint: unsupported schema_version " + std::to_string(version));
    }
    const auto kind = j.at("estimator").get<std::string>();
    if (kind == "zero") return std::make_unique<ZeroEstimator>();
    const TrainConfig cfg = train_config_from_json(j.at("config"));
    const auto& sub = j.at("submodels");
    if (kind == "sin") {
        Stage1Result s1;
        s1.m = mlp_from_json(sub.at("m"));
        s1.y_mean = j.at("y_mean").get<double>();
        s1.y_scale = j.at("y_scale").get<double>();
        Stage2Result s2;
        s2.g = mlp_from_json(sub.at("g"));
        s2.e = mlp_from_json(sub.at("e"));
        s2.h = encoder_from_json(sub.at("h"));
        s2.r_scale = j.at("r_scale").get<double>();
        return std::make_unique<SinEstimator>(std::move(s1), std::move(s2), std::move(catalog), cfg);
    }
    if (kind == "gnn" || kind == "graphite") {
        RegressionNets nets;
        nets.cov = mlp_from_json(sub.at("cov"));
        nets.enc = encoder_from_json(sub.at("enc"));
        nets.head = mlp_from_json(sub.at("head"));
        nets.y_mean = j.at("y_mean").get<double>();
        nets.y_scale = j.at("y_scale").get<double>();
        return std::make_unique<GraphRegressionEstimator>(kind, std::move(nets), RegressionTrace{}, std::move(catalog),
                                                          cfg);
    }
    if (kind == "cat") {
        return std::make_unique<CatEstimator>(mlp_from_json(sub.at("net")), j.at("seen").get<std::vector<int>>(),
                                              j.at("mapping").get<std::vector<int>>(), j.at("y_mean").get<double>(),
                                              j.at("y_scale").get<double>(), cfg);
    }
    throw std::invalid_argument("load_checkpoint: unknown estimator '" + kind + "'");
}

}  // namespace grd
