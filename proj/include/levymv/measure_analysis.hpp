#pragma once

#include "levymv/model.hpp"

#include <Eigen/Dense>
#include <span>

namespace levymv {

// W2 distance from the empirical measure of `states` to the point mass at
// the origin; closed form sqrt((1/N) sum |x_i|^2).
double w2_to_dirac0(const Eigen::Ref<const Eigen::MatrixXd>& states);
double w2_to_dirac0(const ParticleEnsemble& ensemble);

// Synchronous-coupling bound sqrt((1/N) sum |x_i - y_i|^2): an upper bound
// for W2 between the two empirical measures that respects particle pairing.
// Requires equal shapes.
double w2_coupling_bound(const Eigen::Ref<const Eigen::MatrixXd>& states_a,
                         const Eigen::Ref<const Eigen::MatrixXd>& states_b);

// Exact W2 between two one-dimensional empirical measures of equal size,
// sqrt((1/N) sum (a_(i) - b_(i))^2) over sorted order statistics.
double w2_exact_1d(Eigen::VectorXd a, Eigen::VectorXd b);

// Mean of |x|^p pooled over repetitions and particles, p > 0.
double estimate_moment(std::span<const ParticleEnsemble> ensembles, double p);

struct LevelErrorPoint {
    int level = 0;           // finer dyadic exponent: delta_fine = 2^-(level+1)
    double mse = 0.0;        // mean squared terminal difference fine vs coarse
    int m_repetitions = 0;
};

// MSE between paired terminal samples (one row per particle-path, rows
// aligned across the two matrices).  Requires equal, non-empty shapes.
LevelErrorPoint mse_levels(int level, const Eigen::Ref<const Eigen::MatrixXd>& fine,
                           const Eigen::Ref<const Eigen::MatrixXd>& coarse, int m_repetitions);

struct RateFit {
    double beta = 0.0;          // -slope/2 of log2(mse) against level
    double intercept = 0.0;     // fitted log2(mse) at level 0
    double residual_norm = 0.0; // RMS of fit residuals
    int n_points = 0;
};

// Unweighted least squares of log2(mse) on the level index.  Needs at least
// two points with distinct levels (std::invalid_argument otherwise) and
// strictly positive finite MSEs (DegenerateInputError otherwise: a zero MSE
// has no log).
RateFit fit_rate(std::span<const LevelErrorPoint> points);

} // namespace levymv
