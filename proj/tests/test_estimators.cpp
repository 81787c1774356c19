#include "grd/estimators.hpp"
#include "grd/hsic.hpp"
#include "grd/metrics.hpp"
#include "instances.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>

using namespace grd;

namespace {

SimConfig small_sw(std::uint64_t seed, int n_in = 120) {
    SimConfig c = default_sim_config(BenchmarkKind::SmallWorld);
    c.n_in = n_in;
    c.n_out = 40;
    c.n_treatments = 8;
    c.d_x = 5;
    c.kappa = 1.0;
    c.master_seed = seed;
    return c;
}

TrainConfig fast_config() {
    TrainConfig c;
    c.embed_dim = 4;
    c.cov_hidden = 16;
    c.cov_out = 4;
    c.treat_hidden = 8;
    c.m_hidden = 16;
    c.e_hidden = 8;
    c.head_hidden = 16;
    c.stage1_epochs = 30;
    c.stage2_epochs = 8;
    c.inner_steps = 3;
    c.epochs = 30;
    c.batch = 64;
    c.stage1_batch = 64;
    c.stage2_batch = 64;
    return c;
}

void check_score_contract(const CateEstimator& est, const Matrix& X, int n_treatments) {
    std::vector<int> all(n_treatments);
    std::iota(all.begin(), all.end(), 0);
    const Matrix s = est.treatment_scores(X, all);
    CHECK(s.rows() == X.rows());
    CHECK(s.cols() == n_treatments);
    for (int i = 0; i < std::min<int>(5, static_cast<int>(X.rows())); ++i) {
        const Vector x = X.row(i).transpose();
        for (int a = 0; a < n_treatments; ++a) {
            CHECK(est.predict_cate(x, a, a) == 0.0);
            for (int b = 0; b < n_treatments; ++b) {
                const double ab = est.predict_cate(x, a, b);
                CHECK(ab == doctest::Approx(-est.predict_cate(x, b, a)).epsilon(1e-12));
                CHECK(ab == doctest::Approx(s(i, a) - s(i, b)).epsilon(1e-9).scale(1.0));
            }
        }
        for (int c = 2; c < n_treatments; ++c) {
            CHECK(est.predict_cate(x, c, 0) ==
                  doctest::Approx(est.predict_cate(x, c, 1) + est.predict_cate(x, 1, 0)).epsilon(1e-10).scale(1.0));
        }
    }
}

std::vector<double> flat_params(const nlohmann::json& j) {
    std::vector<double> out;
    std::function<void(const nlohmann::json&)> walk = [&](const nlohmann::json& v) {
        if (v.is_number_float()) out.push_back(v.get<double>());
        if (v.is_array() || v.is_object())
            for (const auto& c : v) walk(c);
    };
    walk(j);
    return out;
}

}  // namespace

TEST_CASE("zero estimator") {
    ZeroEstimator z;
    Rng rng(1);
    const Matrix X = testing::random_matrix(rng, 4, 3);
    CHECK(z.predict_cate(X.row(0).transpose(), 1, 0) == 0.0);
    const std::vector<int> ids{0, 1, 2};
    CHECK(z.treatment_scores(X, ids).isZero());
    CHECK_THROWS_AS(z.predict_outcome(X, ids), std::logic_error);
}

TEST_CASE("oracle estimator scores perfectly") {
    const Benchmark b = build_benchmark(small_sw(2));
    GroundTruthEstimator oracle(b.truth);
    for (bool w : {false, true}) {
        const auto r = pehe_at_k(oracle, b.out_sample, *b.truth, b.propensity, EvalConfig{6, w, Split::OutSample});
        CHECK(r.value < 1e-12);
    }
}

TEST_CASE("train config json round trip and validation") {
    TrainConfig c = fast_config();
    c.lr_g = 3e-4;
    const TrainConfig back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK_THROWS(train_config_from_json(nlohmann::json{{"no_such_field", 1}}));
    c.inner_steps = 0;
    CHECK_THROWS(c.validate());
    c = fast_config();
    c.lr = 0;
    CHECK_THROWS(c.validate());
}

TEST_CASE("SIN satisfies the score contract, is deterministic and round-trips") {
    const Benchmark b = build_benchmark(small_sw(3));
    const auto a = train_sin(b.in_sample, fast_config());
    const auto c = train_sin(b.in_sample, fast_config());
    check_score_contract(*a, b.out_sample.x, 8);
    CHECK(a->checkpoint() == c->checkpoint());
    const auto loaded = load_checkpoint(a->checkpoint(), b.in_sample.catalog);
    const std::vector<int> ids{0, 3, 7};
    CHECK(loaded->treatment_scores(b.out_sample.x, ids).isApprox(a->treatment_scores(b.out_sample.x, ids)));
    CHECK(loaded->predict_outcome(b.out_sample.x, b.out_sample.t)
              .isApprox(a->predict_outcome(b.out_sample.x, b.out_sample.t)));
    for (double l : a->stage2().gh_loss_history) CHECK(std::isfinite(l));
}

TEST_CASE("stage 1 fits a constant target") {
    const Benchmark b = build_benchmark(small_sw(4, 400));
    Dataset d = b.in_sample;
    d.y.setConstant(5.0);
    TrainConfig cfg = fast_config();
    cfg.stage1_epochs = 200;
    const Stage1Result s1 = train_stage1(d, cfg);
    const Matrix m = s1.m.forward(b.out_sample.x);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        CHECK(std::abs(s1.y_mean + s1.y_scale * m(i, 0) - 5.0) <= 0.05);
    }
}

TEST_CASE("stage 1 fits a linear target") {
    SimConfig sc = small_sw(5, 2000);
    sc.n_out = 500;
    const Benchmark b = build_benchmark(sc);
    Dataset d = b.in_sample;
    d.y = d.x * b.truth->v0;
    TrainConfig cfg = fast_config();
    cfg.stage1_epochs = 300;
    cfg.m_hidden = 32;
    cfg.lr_m = 3e-3;
    const Stage1Result s1 = train_stage1(d, cfg);
    const Vector y_out = b.out_sample.x * b.truth->v0;
    const Vector pred = (s1.y_mean + s1.y_scale * s1.m.forward(b.out_sample.x).array()).matrix().col(0);
    const double var = (y_out.array() - y_out.mean()).square().mean();
    CHECK((pred - y_out).squaredNorm() / y_out.size() < 0.01 * var);
    const auto& h = s1.loss_history;
    REQUIRE(!h.empty());
    const auto best = std::min_element(h.begin(), h.end());
    CHECK(*best < 0.05 * h.front());
    if (static_cast<int>(h.size()) < cfg.stage1_epochs) {
        CHECK(std::distance(best, h.end()) - 1 == cfg.patience_m);
    }
}

TEST_CASE("stop-gradient contract between J_gh and J_e") {
    Rng rng(6);
    const auto catalog = testing::random_catalog(rng, 3);
    const std::vector<int> ids{0, 1, 2};
    const GraphBatch batch(catalog, ids);
    const std::vector<int> rows{0, 1, 2, 1, 0};
    const Matrix X = testing::random_matrix(rng, 5, 3);
    const Matrix R = testing::random_matrix(rng, 5, 1);
    const Mlp g(MlpConfig{{3, 6, 2}, Activation::ReLU, 1});
    const Mlp e(MlpConfig{{3, 6, 2}, Activation::ReLU, 2});
    const GraphEncoder h(GraphEncoderConfig{1, 4, 2, 2, 3});

    ad::Tape tape;
    const auto gp = g.bind(tape);
    const auto hp = h.bind(tape);
    const auto ep = e.bind(tape);
    const ad::Var x = tape.constant(X);
    const ad::Var e_hat = e.forward(x, ep);
    tape.backward(losses::sin_gh(g, gp, h, hp, batch, rows, x, tape.constant(R), e_hat));
    for (const auto& p : ep) CHECK(tape.grad(p).isZero());
    bool any = false;
    for (const auto& p : gp) any = any || !tape.grad(p).isZero();
    CHECK(any);

    ad::Tape tape2;
    const auto hp2 = h.bind(tape2);
    const auto ep2 = e.bind(tape2);
    const ad::Var target = ad::gather_rows(h.encode(tape2, batch, hp2), rows);
    tape2.backward(losses::sin_e(e, ep2, tape2.constant(X), target));
    for (const auto& p : hp2) CHECK(tape2.grad(p).isZero());
}

TEST_CASE("e^h beats the unconditional mean of h") {
    SimConfig sc = small_sw(7, 300);
    sc.kappa = 10.0;
    const Benchmark b = build_benchmark(sc);
    TrainConfig cfg = fast_config();
    cfg.stage2_epochs = 30;
    const auto sin = train_sin(b.in_sample, cfg);
    const Matrix H = sin->embed_treatments(b.in_sample.t);
    const Matrix E = sin->stage2().e.forward(b.in_sample.x);
    const double fit = (H - E).squaredNorm() / H.rows();
    const Matrix centered = H.rowwise() - H.colwise().mean();
    const double scale = H.squaredNorm() / H.rows();
    CHECK(fit <= centered.squaredNorm() / H.rows() + 1e-3 * scale);
    CHECK(fit < 0.01 * scale);
}

TEST_CASE("SIN recovers a planted binary Robinson effect") {
    Rng rng(8);
    auto catalog = std::make_shared<TreatmentCatalog>();
    catalog->push_back(generate_watts_strogatz(rng, WsParams{10, 2, 0.1}));
    catalog->push_back(generate_watts_strogatz(rng, WsParams{12, 6, 0.9}));
    auto make = [&](int n) {
        Dataset d;
        d.catalog = catalog;
        d.x = sample_covariates(rng, n, 2);
        d.y.resize(n);
        for (int i = 0; i < n; ++i) {
            const double x0 = d.x(i, 0), x1 = d.x(i, 1);
            const double e = 1.0 / (1.0 + std::exp(-x1));
            const int t = rng.uniform() < e ? 1 : 0;
            d.t.push_back(t);
            d.y(i) = 2.0 * x1 + (1.0 + x0) * t + 0.1 * rng.normal();
        }
        return d;
    };
    const Dataset train = make(1500);
    const Dataset test = make(300);
    TrainConfig cfg = fast_config();
    cfg.embed_dim = 1;
    cfg.stage1_epochs = 200;
    cfg.stage2_epochs = 100;
    cfg.inner_steps = 10;
    cfg.lr_g = cfg.lr_h = 3e-3;
    const auto sin = train_sin(train, cfg);
    Vector est(test.n_units()), tau(test.n_units());
    for (int i = 0; i < test.n_units(); ++i) {
        tau(i) = 1.0 + test.x(i, 0);
        est(i) = sin->predict_cate(test.x.row(i).transpose(), 1, 0);
    }
    CHECK((est - tau).squaredNorm() < tau.squaredNorm());
    const Vector a = est.array() - est.mean(), c = tau.array() - tau.mean();
    CHECK(a.dot(c) / (a.norm() * c.norm()) > 0.5);
}

TEST_CASE("GNN and GraphITE satisfy the score contract") {
    const Benchmark b = build_benchmark(small_sw(9));
    const auto gnn = train_gnn_regression(b.in_sample, fast_config());
    check_score_contract(*gnn, b.out_sample.x, 8);
    TrainConfig gc = fast_config();
    gc.hsic_weight = 10.0;
    const auto gi = train_graphite(b.in_sample, gc);
    check_score_contract(*gi, b.out_sample.x, 8);
    for (double l : gi->trace().loss_history) CHECK(std::isfinite(l));
    const auto loaded = load_checkpoint(gi->checkpoint(), b.in_sample.catalog);
    const std::vector<int> ids{1, 2};
    CHECK(loaded->treatment_scores(b.out_sample.x, ids).isApprox(gi->treatment_scores(b.out_sample.x, ids)));
}

TEST_CASE("GraphITE with zero weight reproduces the GNN trajectory") {
    const Benchmark b = build_benchmark(small_sw(10));
    TrainConfig cfg = fast_config();
    cfg.hsic_weight = 0.0;
    const auto gnn = train_gnn_regression(b.in_sample, cfg);
    const auto gi = train_graphite(b.in_sample, cfg);
    CHECK(gnn->trace().loss_history == gi->trace().loss_history);
    CHECK(flat_params(gnn->checkpoint().at("submodels")) == flat_params(gi->checkpoint().at("submodels")));
}

TEST_CASE("GraphITE losses stay finite over the weight grid") {
    const Benchmark b = build_benchmark(small_sw(11));
    for (double w : {0.001, 0.01, 1.0, 10.0, 100.0, 1000.0}) {
        TrainConfig cfg = fast_config();
        cfg.epochs = 5;
        cfg.hsic_weight = w;
        const auto gi = train_graphite(b.in_sample, cfg);
        for (double l : gi->trace().loss_history) CHECK(std::isfinite(l));
    }
}

TEST_CASE("the GNN fits a noiseless planted outcome") {
    SimConfig sc = small_sw(12, 500);
    sc.noise_std = 0.0;
    sc.n_out = 250;
    sc.kappa = 0.0;
    const Benchmark b = build_benchmark(sc);
    TrainConfig cfg = fast_config();
    cfg.epochs = 200;
    cfg.lr = 3e-3;
    const auto gnn = train_gnn_regression(b.in_sample, cfg);
    const Vector pred = gnn->predict_outcome(b.out_sample.x, b.out_sample.t);
    const Vector& y = b.out_sample.y;
    const double var = (y.array() - y.mean()).square().mean();
    CHECK((pred - y).squaredNorm() / y.size() < var / 10.0);
}

TEST_CASE("nearest seen mapping") {
    Matrix emb(5, 2);
    emb << 0, 0, 1, 0, 0, 0, 5, 5, 1.1, 0;
    const std::vector<int> seen{0, 1};
    const auto m = nearest_seen_mapping(emb, seen);
    CHECK(m == std::vector<int>{0, 1, 0, 1, 1});
}

TEST_CASE("CAT maps unseen treatments and has zero effect between co-mapped ones") {
    SimConfig sc = small_sw(13);
    sc.kappa = 10.0;
    const Benchmark b = build_benchmark(sc);
    TrainConfig cfg = fast_config();
    const auto gnn = train_gnn_regression(b.in_sample, cfg);
    const Matrix table = gnn->embedding_table();
    const auto cat = train_cat(b.in_sample, cfg, table);
    check_score_contract(*cat, b.out_sample.x, 8);
    const auto& seen = cat->seen_treatments();
    for (int s : seen) CHECK(cat->mapped_treatment(s) == s);
    const Vector x = b.out_sample.x.row(0).transpose();
    for (int t = 0; t < 8; ++t) {
        CHECK(cat->predict_cate(x, t, cat->mapped_treatment(t)) == 0.0);
        for (int u = 0; u < 8; ++u) {
            if (cat->mapped_treatment(t) == cat->mapped_treatment(u)) CHECK(cat->predict_cate(x, t, u) == 0.0);
        }
    }
    Matrix collapsed = table;
    for (int t = 0; t < 8; ++t) collapsed.row(t) = table.row(seen.front());
    const auto cat2 = train_cat(b.in_sample, cfg, collapsed);
    for (int t = 0; t < 8; ++t) {
        const bool is_seen = std::find(seen.begin(), seen.end(), t) != seen.end();
        CHECK(cat2->mapped_treatment(t) == (is_seen ? t : seen.front()));
    }
    Dataset empty = b.in_sample.subset(std::vector<int>{});
    CHECK_THROWS(train_cat(empty, cfg, table));
}

TEST_CASE("checkpoints carry a schema version") {
    const Benchmark b = build_benchmark(small_sw(14));
    nlohmann::json j = ZeroEstimator().checkpoint();
    CHECK(j.at("schema_version") == 1);
    CHECK(load_checkpoint(j, b.in_sample.catalog)->name() == "zero");
    j["schema_version"] = 99;
    CHECK_THROWS(load_checkpoint(j, b.in_sample.catalog));
}
