#include "grd/hsic.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <vector>

namespace grd {

namespace {

constexpr Eigen::Index kMinSamples = 4;

ad::Var gram(ad::Var a, double sigma) {
    return ad::exp(ad::scale(ad::pairwise_sq_dists(a), -1.0 / (2.0 * sigma * sigma)));
}

// Positive pairwise distances with their row pairs. Distances at roundoff
// level relative to the row norms count as zero.
std::vector<std::pair<double, std::pair<int, int>>> positive_distances(const Matrix& v) {
    const double tol = 1e-10 * (1.0 + v.rowwise().norm().maxCoeff());
    std::vector<std::pair<double, std::pair<int, int>>> pairs;
    for (int i = 0; i < v.rows(); ++i) {
        for (int j = i + 1; j < v.rows(); ++j) {
            const double dist = (v.row(i) - v.row(j)).norm();
            if (dist > tol) pairs.push_back({dist, {i, j}});
        }
    }
    std::sort(pairs.begin(), pairs.end());
    return pairs;
}

// Median-heuristic Gram matrix with the bandwidth kept on the tape, so the
// gradient includes the dependence of the median distance on `a`.
ad::Var median_gram(ad::Var a) {
    const auto pairs = positive_distances(a.value());
    const std::size_t mid = pairs.size() / 2;
    auto pick = [&](std::size_t k) {
        const int rows_i[] = {pairs[k].second.first};
        const int rows_j[] = {pairs[k].second.second};
        const ad::Var diff = ad::sub(ad::gather_rows(a, rows_i), ad::gather_rows(a, rows_j));
        return ad::sqrt(ad::sum(ad::square(diff)));
    };
    ad::Var sigma = pick(mid);
    if (pairs.size() % 2 == 0) sigma = ad::scale(ad::add(pick(mid - 1), sigma), 0.5);
    const ad::Var two_sigma_sq = ad::scale(ad::square(sigma), 2.0);
    return ad::exp(ad::scale(ad::div(ad::pairwise_sq_dists(a), two_sigma_sq), -1.0));
}

// tr(K~ L~) / (n-1)^2, with K~ and L~ symmetric so the trace is the sum of the
// elementwise product.
ad::Var hsic_from_centered(ad::Var kc, ad::Var lc) {
    const double n = static_cast<double>(kc.rows());
    return ad::scale(ad::sum(ad::mul(kc, lc)), 1.0 / ((n - 1.0) * (n - 1.0)));
}

void warn_degenerate() {
    static thread_local bool warned = false;
    if (!warned) {
        std::cerr << "warning: hsic_normalized on a degenerate sample (identical rows); returning 0\n";
        warned = true;
    }
}

}  // namespace

double median_pairwise_distance(const Matrix& a) {
    if (a.rows() < 2) return 0.0;
    const auto pairs = positive_distances(a);
    if (pairs.empty()) return 0.0;
    const std::size_t mid = pairs.size() / 2;
    if (pairs.size() % 2 == 1) return pairs[mid].first;
    return 0.5 * (pairs[mid - 1].first + pairs[mid].first);
}

double hsic(const Matrix& a, const Matrix& b, double sigma_a, double sigma_b) {
    if (a.rows() != b.rows()) throw ShapeError("hsic: samples differ in size");
    if (a.rows() < kMinSamples) throw std::invalid_argument("hsic: need at least 4 samples");
    ad::Tape tape;
    const ad::Var kc = ad::double_center(gram(tape.constant(a), sigma_a));
    const ad::Var lc = ad::double_center(gram(tape.constant(b), sigma_b));
    return hsic_from_centered(kc, lc).value()(0, 0);
}

double hsic_normalized(const Matrix& a, const Matrix& b) {
    ad::Tape tape;
    return hsic_normalized(tape.constant(a), tape.constant(b)).value()(0, 0);
}

ad::Var hsic_normalized(ad::Var a, ad::Var b) {
    if (a.rows() != b.rows()) throw ShapeError("hsic_normalized: samples differ in size");
    if (a.rows() < kMinSamples) throw std::invalid_argument("hsic_normalized: need at least 4 samples");
    ad::Tape& tape = *a.tape();
    const double sigma_a = median_pairwise_distance(a.value());
    const double sigma_b = median_pairwise_distance(b.value());
    if (sigma_a == 0.0 || sigma_b == 0.0) {
        warn_degenerate();
        return tape.constant(Matrix::Zero(1, 1));
    }
    const ad::Var kc = ad::double_center(median_gram(a));
    const ad::Var lc = ad::double_center(median_gram(b));
    const ad::Var ab = hsic_from_centered(kc, lc);
    const ad::Var aa = hsic_from_centered(kc, kc);
    const ad::Var bb = hsic_from_centered(lc, lc);
    const ad::Var denom = ad::sqrt(ad::mul(aa, bb));
    if (denom.value()(0, 0) <= 0.0) {
        warn_degenerate();
        return tape.constant(Matrix::Zero(1, 1));
    }
    return ad::div(ab, denom);
}

}  // namespace grd
