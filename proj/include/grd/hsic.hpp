#pragma once

#include "grd/autodiff.hpp"

namespace grd {

/// Median of the non-zero pairwise Euclidean distances between rows.
/// Returns 0 when all rows coincide.
double median_pairwise_distance(const Matrix& a);

/// Biased HSIC estimate tr(K~ L~)/(n-1)^2 with Gaussian kernels
/// exp(-d^2 / (2 sigma^2)) and doubly-centered Gram matrices.
double hsic(const Matrix& a, const Matrix& b, double sigma_a, double sigma_b);

/// HSIC(A,B) / sqrt(HSIC(A,A) HSIC(B,B)), bandwidths from the median
/// heuristic. Lies in [0, 1]. Degenerate input (a sample whose rows are all
/// identical) yields 0.
double hsic_normalized(const Matrix& a, const Matrix& b);

/// Differentiable version of hsic_normalized. Gradients also flow through
/// the median-heuristic bandwidths.
ad::Var hsic_normalized(ad::Var a, ad::Var b);

}  // namespace grd
