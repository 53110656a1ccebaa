#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>

namespace levymv {

// Snapshot of a particle system at one time: one row per particle.
struct ParticleEnsemble {
    Eigen::MatrixXd states; // n_particles x d
    double time = 0.0;

    Eigen::Index size() const noexcept { return states.rows(); }
    Eigen::Index dimension() const noexcept { return states.cols(); }
};

// The summary of an empirical measure the coefficients may depend on:
// first moment vector and second raw moment (1/N) sum |x_i|^2.
struct MeasureStats {
    Eigen::VectorXd mean;
    double second_raw_moment = 0.0;
    Eigen::Index n = 0;
};

// Throws std::invalid_argument on an empty ensemble.
MeasureStats ensemble_stats(const ParticleEnsemble& ensemble);
MeasureStats ensemble_stats(const Eigen::Ref<const Eigen::MatrixXd>& states);

using DriftFn = std::function<void(const Eigen::VectorXd& x, const MeasureStats& mu,
                                   Eigen::Ref<Eigen::VectorXd> out)>;
using FactorFn = std::function<void(const Eigen::VectorXd& x, const MeasureStats& mu,
                                    Eigen::Ref<Eigen::MatrixXd> out)>;

// Measure-dependent SDE coefficients
//   dX = b(X, mu) dt + sigma(X, mu) dW + c(X-, mu) dZ
// plus the two growth exponents the adaptive clock needs: ell bounds the
// drift's polynomial growth, p0 (even, >= 2) is the jump-moment power.
struct McKeanVlasovModel {
    std::string name;
    Eigen::Index dimension = 1;
    double ell = 0.0;
    int p0 = 2;
    bool has_diffusion = true; // false lets drivers skip Brownian draws
    bool has_jumps = true;     // false lets drivers skip Gamma draws

    DriftFn drift;
    FactorFn diffusion;
    FactorFn jump;
};

struct Coefficients {
    Eigen::VectorXd drift;     // d
    Eigen::MatrixXd diffusion; // d x d
    Eigen::MatrixXd jump;      // d x d

    void resize(Eigen::Index d) {
        drift.resize(d);
        diffusion.resize(d, d);
        jump.resize(d, d);
    }
};

// Evaluates all three coefficients at (x, mu) into `out`.
// Dimension mismatches raise std::invalid_argument; a non-finite value in any
// output raises NumericOverflowError naming the offending coefficient and,
// when supplied, the scheme step and particle it belongs to.
void eval_coefficients(const McKeanVlasovModel& model, const Eigen::VectorXd& x,
                       const MeasureStats& mu, Coefficients& out,
                       std::int64_t step = -1, std::int64_t particle = -1);

// Named built-in models:
//   "paper-ptvd"  d=1 benchmark with superlinear drift and mean-field terms:
//                 b = -1 - 3(x+m) - x|x|^0.3, sigma = 0.2(1+|x|^1.1+m),
//                 c = 0.2(x+m), where m is the empirical mean; ell=0.3, p0=8.
//   "zero"        all coefficients identically zero (pipeline checks).
//   "decay"       b = -x, no noise (deterministic oracle runs).
//   "ou"          b = -x, sigma = ou_sigma * I, no jumps.
// Unknown names raise std::invalid_argument.
McKeanVlasovModel make_builtin_model(const std::string& name, double ou_sigma = 0.5);

} // namespace levymv
