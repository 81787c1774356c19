#include "grd/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace grd {

std::vector<int> top_k_from_distribution(const Vector& p, int K) {
    const int n = static_cast<int>(p.size());
    if (K < 1 || K > n) {
        throw std::invalid_argument("top_k: K=" + std::to_string(K) + " outside [1, " + std::to_string(n) + "]");
    }
    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    std::partial_sort(ids.begin(), ids.begin() + K, ids.end(), [&](int a, int b) {
        if (p(a) != p(b)) return p(a) > p(b);
        return a < b;
    });
    ids.resize(static_cast<std::size_t>(K));
    return ids;
}

std::vector<int> top_k_treatments(const PropensityModel& pm, const Vector& x, int K) {
    return top_k_from_distribution(pm.distribution(x), K);
}

PeheResult pehe_at_k(const CateEstimator& est, const Dataset& data, const GroundTruth& truth,
                     const PropensityModel& pm, const EvalConfig& cfg) {
    if (cfg.K < 2) throw std::invalid_argument("pehe_at_k: K must be at least 2");
    if (cfg.K > pm.n_treatments()) {
        throw std::invalid_argument("pehe_at_k: K=" + std::to_string(cfg.K) + " exceeds the " +
                                    std::to_string(pm.n_treatments()) + " treatments");
    }
    if (data.n_units() == 0) throw std::invalid_argument("pehe_at_k: empty dataset");
    const int K = cfg.K;
    const int n_pairs = K * (K - 1) / 2;
    std::vector<int> all(static_cast<std::size_t>(pm.n_treatments()));
    std::iota(all.begin(), all.end(), 0);
    const Matrix scores = est.treatment_scores(data.x, all);
    double total = 0.0;
    for (int i = 0; i < data.n_units(); ++i) {
        const Vector x = data.x.row(i).transpose();
        const Vector p = pm.distribution(x);
        const std::vector<int> top = top_k_from_distribution(p, K);
        double unit = 0.0;
        for (int a = 0; a < K; ++a) {
            for (int b = a + 1; b < K; ++b) {
                const int tp = top[static_cast<std::size_t>(a)];
                const int t = top[static_cast<std::size_t>(b)];
                const double err = (scores(i, tp) - scores(i, t)) - truth.true_cate(x, tp, t);
                const double w = cfg.weighted ? p(tp) * p(t) : 1.0;
                unit += w * err * err;
            }
        }
        total += unit / n_pairs;
    }
    PeheResult out;
    out.value = total / data.n_units();
    out.n_units = data.n_units();
    out.n_pairs = n_pairs;
    out.config = cfg;
    return out;
}

}  // namespace grd
