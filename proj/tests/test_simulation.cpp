#include "grd/dataset_io.hpp"
#include "grd/simulation.hpp"
#include "instances.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

using namespace grd;

namespace {

SimConfig small_sw(std::uint64_t seed = 0) {
    SimConfig c = default_sim_config(BenchmarkKind::SmallWorld);
    c.n_in = 60;
    c.n_out = 30;
    c.n_treatments = 8;
    c.d_x = 5;
    c.master_seed = seed;
    return c;
}

SimConfig small_mol(std::uint64_t seed = 0) {
    SimConfig c = default_sim_config(BenchmarkKind::MolecularSurrogate);
    c.n_in = 80;
    c.n_out = 40;
    c.n_treatments = 10;
    c.d_x = 16;
    c.master_seed = seed;
    return c;
}

GroundTruth unit_sw_truth(int d) {
    GroundTruth gt;
    gt.v0 = gt.v_nu = gt.v_l = Vector::Unit(d, 0);
    return gt;
}

}  // namespace

TEST_CASE("unit vectors") {
    Rng rng(1);
    CHECK(sample_unit_vector(rng, 1)(0) == 1.0);
    for (int i = 0; i < 50; ++i) {
        const Vector v = sample_unit_vector(rng, 20);
        CHECK(std::abs(v.norm() - 1.0) < 1e-12);
        CHECK(v.minCoeff() >= 0.0);
    }
}

TEST_CASE("covariate moments") {
    Rng rng(2);
    const Matrix X = sample_covariates(rng, 10000, 20);
    CHECK(X.minCoeff() >= -1.0);
    CHECK(X.maxCoeff() <= 1.0);
    for (int j = 0; j < 20; ++j) {
        const double mean = X.col(j).mean();
        CHECK(std::abs(mean) <= 0.05);
        const double var = (X.col(j).array() - mean).square().sum() / (X.rows() - 1);
        CHECK(std::abs(var - 1.0 / 3.0) <= 0.02);
    }
}

TEST_CASE("propensity softmax") {
    Rng rng(3);
    PropensityModel pm;
    pm.W = testing::random_matrix(rng, 6, 4).cwiseAbs();
    pm.kappa = 0.0;
    const Vector x = testing::random_matrix(rng, 4, 1);
    CHECK((pm.distribution(x).array() - 1.0 / 6).abs().maxCoeff() < 1e-15);

    pm.kappa = 3.0;
    for (int i = 0; i < 20; ++i) {
        const Vector p = pm.distribution(Vector(testing::random_matrix(rng, 4, 1)));
        CHECK(std::abs(p.sum() - 1.0) < 1e-10);
        CHECK(p.minCoeff() > 0.0);
    }

    PropensityModel two;
    two.W = Matrix::Ones(2, 3);
    two.kappa = 5.0;
    const Vector p2 = two.distribution(Vector(Vector::Constant(3, 0.3)));
    CHECK(p2(0) == doctest::Approx(0.5));

    pm.kappa = 1e4;
    const Vector ps = pm.distribution(x);
    CHECK(ps.maxCoeff() >= 0.999);

    Vector bad = x;
    bad(0) = std::nan("");
    CHECK_THROWS_AS(pm.distribution(bad), NumericError);
    CHECK_THROWS_AS(pm.distribution(Vector(Vector::Ones(3))), ShapeError);
}

TEST_CASE("treatment assignment") {
    Rng rng(4);
    Matrix det = Matrix::Zero(3, 4);
    det.col(0).setOnes();
    CHECK(assign_treatments(rng, det) == std::vector<int>{0, 0, 0});

    const int n = 100000, k = 5;
    const Matrix uniform = Matrix::Constant(n, k, 1.0 / k);
    const auto t = assign_treatments(rng, uniform);
    const double sd = std::sqrt(n * 0.2 * 0.8);
    for (int j = 0; j < k; ++j) {
        const auto c = std::count(t.begin(), t.end(), j);
        CHECK(std::abs(c - n / 5.0) <= 3 * sd);
    }
    Rng a(9), b(9);
    CHECK(assign_treatments(a, uniform.topRows(100)) == assign_treatments(b, uniform.topRows(100)));
}

TEST_CASE("small-world outcome formula") {
    const GroundTruth gt = unit_sw_truth(3);
    CHECK(sw_outcome(Vector::Zero(3), GraphStats{3, 2.0}, gt, nullptr) == 0.0);
    CHECK(sw_outcome(Vector::Unit(3, 0), GraphStats{2, 1.5}, gt, nullptr) == doctest::Approx(102.3));
}

TEST_CASE("molecular surrogate outcome formula") {
    GroundTruth gt;
    gt.v0 = Vector::Unit(2, 0);
    const Vector xp = Vector::Unit(8, 0);
    CHECK(molecular_surrogate_outcome(Vector::Zero(2), Vector::Zero(8), Vector::Ones(8), gt, nullptr) == 0.0);
    CHECK(molecular_surrogate_outcome(Vector::Unit(2, 0), xp, Vector::Zero(8), gt, nullptr) == doctest::Approx(10.0));
    CHECK(molecular_surrogate_outcome(Vector::Unit(2, 0), xp, 50.0 * Vector::Unit(8, 0), gt, nullptr) ==
          doctest::Approx(10.5));
}

TEST_CASE("true CATE equals noiseless outcome differences") {
    for (const SimConfig& cfg : {small_sw(1), small_mol(1)}) {
        const Benchmark b = build_benchmark(cfg);
        const GroundTruth& gt = *b.truth;
        Rng rng(5);
        for (int i = 0; i < 1000; ++i) {
            const Vector x = sample_covariates(rng, 1, cfg.d_x).row(0).transpose();
            const int t1 = static_cast<int>(rng.uniform_index(cfg.n_treatments));
            const int t2 = static_cast<int>(rng.uniform_index(cfg.n_treatments));
            const double tau = gt.true_cate(x, t1, t2);
            CHECK(std::abs(tau - (gt.noiseless_outcome(x, t1) - gt.noiseless_outcome(x, t2))) < 1e-10);
            CHECK(tau == -gt.true_cate(x, t2, t1));
            CHECK(gt.true_cate(x, t1, t1) == 0.0);
        }
        CHECK_THROWS(gt.true_cate(Vector::Zero(cfg.d_x), cfg.n_treatments, 0));
    }
}

TEST_CASE("identical graph statistics give identical outcomes") {
    const GroundTruth gt = unit_sw_truth(4);
    Rng rng(6);
    const Vector x = testing::random_matrix(rng, 4, 1);
    CHECK(sw_outcome(x, GraphStats{3, 2.2}, gt, nullptr) == sw_outcome(x, GraphStats{3, 2.2}, gt, nullptr));
}

TEST_CASE("benchmark structure") {
    const Benchmark b = build_benchmark(small_sw(2));
    const GroundTruth& gt = *b.truth;
    CHECK(std::abs(gt.v0.norm() - 1) < 1e-12);
    CHECK(std::abs(gt.v_nu.norm() - 1) < 1e-12);
    CHECK(std::abs(gt.v_l.norm() - 1) < 1e-12);
    CHECK(b.in_sample.n_units() == 60);
    CHECK(b.out_sample.n_units() == 30);
    CHECK(b.in_sample.catalog->size() == 8);
    for (const Graph& g : *b.in_sample.catalog) CHECK(is_connected(g));
    for (int t : b.in_sample.t) CHECK((t >= 0 && t < 8));
    std::set<std::vector<double>> rows;
    for (int i = 0; i < 60; ++i) rows.insert({b.in_sample.x.row(i).data(), b.in_sample.x.row(i).data() + 5});
    for (int i = 0; i < 30; ++i) CHECK(rows.count({b.out_sample.x.row(i).data(), b.out_sample.x.row(i).data() + 5}) == 0);
    CHECK(b.propensity.transform == CovariateTransform::ElementwiseSquare);
    CHECK(b.propensity.W.minCoeff() >= 0.0);
    CHECK(b.propensity.W.maxCoeff() <= 1.0);
}

TEST_CASE("benchmarks are deterministic in the master seed") {
    const Benchmark a = build_benchmark(small_sw(3));
    const Benchmark b = build_benchmark(small_sw(3));
    const Benchmark c = build_benchmark(small_sw(4));
    CHECK(a.in_sample.x == b.in_sample.x);
    CHECK(a.in_sample.y == b.in_sample.y);
    CHECK(a.in_sample.t == b.in_sample.t);
    CHECK(a.out_sample.y == b.out_sample.y);
    CHECK(a.propensity.W == b.propensity.W);
    CHECK(a.in_sample.y != c.in_sample.y);
}

TEST_CASE("full-size SW catalog has 200 connected graphs") {
    SimConfig cfg = small_sw(5);
    cfg.n_treatments = 200;
    const Benchmark b = build_benchmark(cfg);
    CHECK(b.in_sample.catalog->size() == 200);
    for (const Graph& g : *b.in_sample.catalog) CHECK(is_connected(g));
}

TEST_CASE("noise is centered and unrelated to covariates") {
    SimConfig cfg = small_sw(6);
    cfg.n_in = 10000;
    cfg.n_out = 10;
    const Benchmark b = build_benchmark(cfg);
    const Dataset& d = b.in_sample;
    Vector eps(d.n_units());
    for (int i = 0; i < d.n_units(); ++i) {
        eps(i) = d.y(i) - b.truth->noiseless_outcome(d.x.row(i).transpose(), d.t[i]);
    }
    Matrix design(d.n_units(), d.d_x() + 1);
    design << Matrix::Ones(d.n_units(), 1), d.x;
    const Vector coef = design.colPivHouseholderQr().solve(eps);
    // standard errors ~ 1/sqrt(n) for the intercept, sqrt(3/n) for slopes
    CHECK(std::abs(coef(0)) < 4.0 / std::sqrt(10000.0));
    for (int j = 1; j < coef.size(); ++j) CHECK(std::abs(coef(j)) < 4.0 * std::sqrt(3.0 / 10000.0));
}

TEST_CASE("molecular surrogate benchmark") {
    const Benchmark b = build_benchmark(small_mol(7));
    const GroundTruth& gt = *b.truth;
    CHECK(gt.pca_basis.cols() == 8);
    CHECK((gt.pca_basis.transpose() * gt.pca_basis - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(gt.properties.rows() == 10);
    CHECK(b.propensity.transform == CovariateTransform::Identity);
}

TEST_CASE("pca") {
    Rng rng(8);
    const Matrix u = testing::random_matrix(rng, 50, 1);
    const Matrix v = testing::random_matrix(rng, 1, 6);
    const PcaResult r1 = pca_project(u * v, 3);
    CHECK(r1.eigenvalues(0) > 0.0);
    for (int j = 1; j < 6; ++j) CHECK(std::abs(r1.eigenvalues(j)) <= 1e-10);

    const Matrix X = testing::random_matrix(rng, 40, 6);
    const PcaResult a = pca_project(X, 3);
    Matrix shifted = X;
    shifted.rowwise() += testing::random_matrix(rng, 1, 6).row(0);
    const PcaResult b = pca_project(shifted, 3);
    CHECK((a.projected - b.projected).cwiseAbs().maxCoeff() < 1e-10);

    Matrix centered = X;
    centered.rowwise() -= a.mean.transpose();
    const Matrix recon = a.projected * a.basis.transpose();
    const double err = (centered - recon).squaredNorm() / (X.rows() - 1);
    CHECK(err == doctest::Approx(a.eigenvalues.tail(3).sum()).epsilon(1e-8));
    CHECK_THROWS(pca_project(X, 7));
}

TEST_CASE("config validation") {
    SimConfig c = small_sw();
    c.n_in = 0;
    CHECK_THROWS(c.validate());
    c = small_sw();
    c.kappa = -1;
    CHECK_THROWS(c.validate());
}

TEST_CASE("dataset json lines round trip") {
    const Benchmark b = build_benchmark(small_sw(9));
    std::stringstream ss;
    write_dataset(ss, b.in_sample, {{"note", "x"}});
    nlohmann::json meta;
    const Dataset back = read_dataset(ss, &meta);
    CHECK(back.x == b.in_sample.x);
    CHECK(back.y == b.in_sample.y);
    CHECK(back.t == b.in_sample.t);
    CHECK(back.catalog->size() == b.in_sample.catalog->size());
    CHECK(meta.at("note") == "x");

    GroundTruth gt;
    PropensityModel pm;
    truth_from_json(truth_to_json(*b.truth, b.propensity), gt, pm);
    const Vector x = b.out_sample.x.row(0).transpose();
    CHECK(gt.true_cate(x, 1, 0) == b.truth->true_cate(x, 1, 0));
    CHECK(pm.distribution(x) == b.propensity.distribution(x));
}
