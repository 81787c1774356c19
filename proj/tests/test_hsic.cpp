#include "grd/hsic.hpp"
#include "instances.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace grd;

namespace {

Matrix permute_rows(const Matrix& m, Rng& rng) {
    std::vector<int> p(m.rows());
    for (int i = 0; i < static_cast<int>(p.size()); ++i) p[i] = i;
    rng.shuffle(p);
    Matrix out(m.rows(), m.cols());
    for (int i = 0; i < static_cast<int>(p.size()); ++i) out.row(i) = m.row(p[i]);
    return out;
}

}  // namespace

TEST_CASE("normalized hsic of a sample with itself is 1") {
    Rng rng(1);
    const Matrix A = testing::random_matrix(rng, 100, 3);
    CHECK(std::abs(hsic_normalized(A, A) - 1.0) < 1e-10);
}

TEST_CASE("normalized hsic lies in [0, 1]") {
    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        const Matrix A = testing::random_matrix(rng, 30, 2);
        const Matrix B = testing::random_matrix(rng, 30, 4);
        const double h = hsic_normalized(A, B);
        CHECK(h >= 0.0);
        CHECK(h <= 1.0 + 1e-12);
    }
}

TEST_CASE("independent samples fall inside the permutation null") {
    Rng rng(3);
    const Matrix A = testing::random_matrix(rng, 200, 2);
    const Matrix B = testing::random_matrix(rng, 200, 2);
    const double stat = hsic_normalized(A, B);
    std::vector<double> null;
    for (int i = 0; i < 500; ++i) null.push_back(hsic_normalized(A, permute_rows(B, rng)));
    std::sort(null.begin(), null.end());
    CHECK(stat < null[474]);
    CHECK(stat < 0.1);
}

TEST_CASE("dependence is detected") {
    Rng rng(4);
    const Matrix A = testing::random_matrix(rng, 200, 1);
    const Matrix B = A.array().square().matrix() + 0.1 * testing::random_matrix(rng, 200, 1);
    std::vector<double> null;
    for (int i = 0; i < 200; ++i) null.push_back(hsic_normalized(A, permute_rows(B, rng)));
    CHECK(hsic_normalized(A, B) > *std::max_element(null.begin(), null.end()));
}

TEST_CASE("permutation null p-values are roughly uniform") {
    Rng rng(5);
    int rejections = 0;
    const int tests = 40;
    for (int t = 0; t < tests; ++t) {
        const Matrix A = testing::random_matrix(rng, 40, 2);
        const Matrix B = permute_rows(testing::random_matrix(rng, 40, 2), rng);
        const double stat = hsic_normalized(A, B);
        int above = 0;
        for (int i = 0; i < 99; ++i) above += hsic_normalized(A, permute_rows(B, rng)) >= stat;
        if ((above + 1) / 100.0 <= 0.1) ++rejections;
    }
    CHECK(rejections <= 10);
}

TEST_CASE("median heuristic") {
    Matrix a(3, 1);
    a << 0, 1, 3;
    CHECK(median_pairwise_distance(a) == 2.0);
    Matrix same = Matrix::Ones(5, 2);
    CHECK(median_pairwise_distance(same) == 0.0);
}

TEST_CASE("degenerate and small inputs") {
    const Matrix same = Matrix::Ones(6, 2);
    Rng rng(6);
    CHECK(hsic_normalized(same, testing::random_matrix(rng, 6, 2)) == 0.0);
    CHECK_THROWS(hsic_normalized(Matrix::Ones(3, 1), Matrix::Ones(3, 1)));
    CHECK_THROWS(hsic_normalized(Matrix::Ones(5, 1), Matrix::Ones(6, 1)));
}

TEST_CASE("normalized hsic gradient matches finite differences") {
    Rng rng(7);
    for (int i = 0; i < 5; ++i) {
        const Matrix A = testing::random_matrix(rng, 9, 2);
        const Matrix B = testing::random_matrix(rng, 9, 3);
        const double err = oracle::gradient_check(
            {A, B}, [](ad::Tape&, std::span<const ad::Var> p) { return hsic_normalized(p[0], p[1]); });
        CHECK(err < 1e-4);
    }
}
