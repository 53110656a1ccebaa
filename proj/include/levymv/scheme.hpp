#pragma once

#include "levymv/levy_noise.hpp"
#include "levymv/model.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace levymv {

// Scale parameters of one discretisation level.  `delta` is the global
// step-size scale: the realised step at state x is delta * h(x, mu) with
//   h(x, mu) = h0 / ( (1 + |b| + |sigma| + |x|^ell)^2 + |c|^p0 ),
// norms Frobenius/Euclidean, so the clock slows down exactly where the
// coefficients grow.
struct SchemeConfig {
    double delta = 0.5;
    double h0 = 1.0;
    double terminal_time = 1.0;
};

struct StepLog {
    std::vector<double> step_times; // 0 = t_0 < t_1 < ... < t_K = T
    std::int64_t step_count = 0;    // K, number of update intervals
    // average over steps and particles of |X_{k+1} - X_k|^2; scales
    // linearly in delta for well-posed models.
    double mean_square_displacement = 0.0;
};

namespace detail {

inline double ipow(double base, int exponent) noexcept {
    double r = 1.0, b = base;
    for (int e = exponent; e > 0; e >>= 1) {
        if (e & 1) r *= b;
        b *= b;
    }
    return r;
}

} // namespace detail

inline double step_size_from_norms(double h0, double drift_norm, double diffusion_norm,
                                   double jump_norm, double state_norm, double ell,
                                   int p0) noexcept {
    const double base = 1.0 + drift_norm + diffusion_norm + std::pow(state_norm, ell);
    return h0 / (base * base + detail::ipow(jump_norm, p0));
}

// h(x, mu) as above.  Throws std::invalid_argument for h0 <= 0, and
// propagates coefficient-evaluation errors.
double local_step_size(const McKeanVlasovModel& model, const Eigen::VectorXd& x,
                       const MeasureStats& mu, double h0 = 1.0);

// delta * min_i h(x_i, mu): the whole ensemble shares one clock, so the
// result lies in (0, h0 * delta].
double ensemble_step_size(const McKeanVlasovModel& model, const ParticleEnsemble& ensemble,
                          const SchemeConfig& config);

// Tamed diffusion factor  sigma / (1 + sqrt(delta) |sigma| (1 + |x|)).
// Shrinks the factor without rotating it, and by construction
//   |tamed| <= |sigma|,  |tamed| (1 + |x|) <= 1/sqrt(delta),
//   |sigma - tamed| <= sqrt(delta) |sigma|^2 (1 + |x|).
template <class DS, class DX>
Eigen::MatrixXd tame_diffusion(const Eigen::MatrixBase<DS>& sigma,
                               const Eigen::MatrixBase<DX>& x, double delta) {
    if (!(delta > 0.0) || delta > 1.0)
        throw std::invalid_argument("tame_diffusion: delta must lie in (0,1]");
    const double shrink = 1.0 + std::sqrt(delta) * sigma.norm() * (1.0 + x.norm());
    return sigma / shrink;
}

// Tamed jump factor  c / (1 + sqrt(delta) |c| (1 + |x| + |b|)); the extra
// drift norm also caps |b| |tamed| by 1/sqrt(delta).
template <class DC, class DX, class DB>
Eigen::MatrixXd tame_jump(const Eigen::MatrixBase<DC>& c, const Eigen::MatrixBase<DX>& x,
                          const Eigen::MatrixBase<DB>& b, double delta) {
    if (!(delta > 0.0) || delta > 1.0)
        throw std::invalid_argument("tame_jump: delta must lie in (0,1]");
    const double shrink = 1.0 + std::sqrt(delta) * c.norm() * (1.0 + x.norm() + b.norm());
    return c / shrink;
}

struct AdvanceResult {
    ParticleEnsemble ensemble; // state at terminal_time
    StepLog log;
};

// Called with the interpolated ensemble at each requested snapshot time
// (ensemble.time carries the snapshot time).
using SnapshotCallback = std::function<void(const ParticleEnsemble&)>;

// Runs the tamed adaptive Euler scheme from `initial` (time 0) to
// config.terminal_time.  Between grid points the state is extended by the
// frozen-coefficient interpolation
//   X_t = X_k + b_k (t - t_k) + sigma_k (W_t - W_k) + c_k (Z_t - Z_k),
// which is how both the terminal time and the snapshot times are hit without
// disturbing the adaptive grid.  snapshot_times must be strictly increasing
// inside (0, T].
//
// Noise is drawn from (repetition, particle)-addressed substreams of
// `noise`, so results do not depend on scheduling or on other repetitions.
// Throws NumericOverflowError when a state or coefficient stops being finite
// or the adaptive clock collapses.
AdvanceResult advance_to(const McKeanVlasovModel& model, const ParticleEnsemble& initial,
                         const SchemeConfig& config, const NoiseStream& noise,
                         const BilateralGammaParams& gamma, std::uint32_t repetition,
                         std::span<const double> snapshot_times = {},
                         const SnapshotCallback& on_snapshot = {});

struct CoupledResult {
    AdvanceResult fine;
    AdvanceResult coarse;
};

// Advances two discretisation levels of the same model under a merged clock:
// every sub-interval between consecutive events (of either level's grid)
// draws one Brownian and one bilateral-Gamma increment per particle, which
// both levels accumulate.  Both levels therefore see the same driving paths,
// which is what makes fine-minus-coarse differences estimate the strong
// discretisation error.  Requires fine.delta <= coarse.delta and equal
// terminal times.
CoupledResult advance_coupled(const McKeanVlasovModel& model, const ParticleEnsemble& initial,
                              const SchemeConfig& fine, const SchemeConfig& coarse,
                              const NoiseStream& noise, const BilateralGammaParams& gamma,
                              std::uint32_t repetition);

} // namespace levymv
