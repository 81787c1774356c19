#pragma once

#include "grd/estimators.hpp"
#include "grd/simulation.hpp"

#include <vector>

namespace grd {

struct EvalConfig {
    int K = 6;
    bool weighted = true;
    Split split = Split::InSample;
};

struct PeheResult {
    double value = 0.0;
    int n_units = 0;
    int n_pairs = 0;  // C(K, 2)
    EvalConfig config;
};

/// Ids of the K most propense treatments, descending; ties by ascending id.
std::vector<int> top_k_treatments(const PropensityModel& pm, const Vector& x, int K);
std::vector<int> top_k_from_distribution(const Vector& p, int K);

/// Mean over units of the mean over top-K pairs of (tau_hat - tau)^2, each
/// pair weighted by p(t|x) p(t'|x) when cfg.weighted (no renormalization).
/// Estimates come from treatment_scores differences.
PeheResult pehe_at_k(const CateEstimator& est, const Dataset& data, const GroundTruth& truth,
                     const PropensityModel& pm, const EvalConfig& cfg);

}  // namespace grd
