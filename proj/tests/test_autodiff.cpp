#include "grd/autodiff.hpp"
#include "grd/nn.hpp"
#include "instances.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace grd;

TEST_CASE("derivative of w^2 at 3 is 6") {
    const auto g = ad::loss_gradients(std::vector<Matrix>{Matrix::Constant(1, 1, 3.0)},
                                      [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::square(p[0])); });
    CHECK(g[0](0, 0) == doctest::Approx(6.0));
}

TEST_CASE("relu subgradient is 0 for negative inputs") {
    Matrix w(1, 2);
    w << -1.0, 2.0;
    const auto g = ad::loss_gradients(std::vector<Matrix>{w},
                                      [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::relu(p[0])); });
    CHECK(g[0](0, 0) == 0.0);
    CHECK(g[0](0, 1) == 1.0);
}

TEST_CASE("non-finite loss throws before propagation") {
    ad::Tape tape;
    const ad::Var w = tape.parameter(Matrix::Constant(1, 1, 1000.0));
    const ad::Var loss = ad::exp(w);
    CHECK_THROWS_AS(tape.backward(loss), NumericError);
    CHECK(tape.grad(w).isZero());
    CHECK_THROWS(ad::sqrt(tape.constant(Matrix::Constant(1, 1, -1.0))));
}

TEST_CASE("shape errors") {
    ad::Tape tape;
    const ad::Var a = tape.constant(Matrix::Ones(2, 3));
    const ad::Var b = tape.constant(Matrix::Ones(2, 3));
    CHECK_THROWS_AS(ad::matmul(a, b), ShapeError);
    CHECK_THROWS_AS(ad::add(a, tape.constant(Matrix::Ones(3, 3))), ShapeError);
}

TEST_CASE("primitive gradients match finite differences") {
    Rng rng(11);
    const Matrix A = testing::random_matrix(rng, 4, 3);
    const Matrix B = testing::random_matrix(rng, 3, 2);
    const Matrix C = testing::random_matrix(rng, 4, 4);
    const ad::LossFn fns[] = {
        [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::square(ad::matmul(p[0], p[1]))); },
        [](ad::Tape&, std::span<const ad::Var> p) { return ad::mean(ad::exp(ad::scale(p[0], 0.3))); },
        [](ad::Tape&, std::span<const ad::Var> p) {
            return ad::sum(ad::mul(ad::double_center(p[2]), ad::transpose(p[2])));
        },
        [](ad::Tape&, std::span<const ad::Var> p) {
            return ad::sum(ad::exp(ad::scale(ad::pairwise_sq_dists(p[0]), -0.2)));
        },
        [](ad::Tape&, std::span<const ad::Var> p) {
            const ad::Var s = ad::sum(ad::square(p[1]));
            return ad::sum(ad::div(ad::row_sum(ad::concat_cols(p[0], p[0])), s));
        },
        [](ad::Tape&, std::span<const ad::Var> p) {
            const std::vector<int> rows{3, 0, 0, 2};
            return ad::sum(ad::square(ad::gather_rows(p[0], rows)));
        },
        [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::sqrt(ad::add(ad::square(p[0]), p[0].tape()->constant(Matrix::Ones(1, 1))))); },
    };
    for (const auto& fn : fns) {
        CHECK(oracle::gradient_check({A, B, C}, fn) < 1e-6);
    }
}

TEST_CASE("sparse matmul gradient") {
    Rng rng(12);
    SparseMatrix s(3, 4);
    s.insert(0, 1) = 0.5;
    s.insert(2, 3) = -1.5;
    s.insert(1, 0) = 2.0;
    s.makeCompressed();
    const Matrix A = testing::random_matrix(rng, 4, 2);
    const double err = oracle::gradient_check(
        {A}, [&](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::square(ad::sparse_matmul(s, p[0]))); });
    CHECK(err < 1e-6);
}

TEST_CASE("detach blocks gradient flow") {
    const auto g = ad::loss_gradients(std::vector<Matrix>{Matrix::Constant(1, 1, 2.0)},
                                      [](ad::Tape&, std::span<const ad::Var> p) {
                                          return ad::sum(ad::mul(p[0], ad::detach(p[0])));
                                      });
    CHECK(g[0](0, 0) == doctest::Approx(2.0));
}

TEST_CASE("training losses pass the gradient check on random instances") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (const auto& inst : testing::loss_instances(seed)) {
            CAPTURE(inst.name);
            CAPTURE(seed);
            CHECK(oracle::gradient_check(inst.params, inst.loss) < 1e-4);
        }
    }
}
