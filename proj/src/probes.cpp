#include "levymv/probes.hpp"

#include "levymv/levy_noise.hpp"
#include "levymv/scheme.hpp"

#include <cmath>
#include <limits>

namespace levymv {

namespace {

constexpr double kSlack = 1e-12; // relative rounding slack

void record(ProbeReport& report, double measured, double allowed) {
    double ratio;
    if (allowed > 0.0)
        ratio = measured / allowed;
    else
        ratio = measured == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    report.worst_ratio = std::max(report.worst_ratio, ratio);
    if (ratio > 1.0 + kSlack) ++report.violations;
}

// Gaussian bulk plus a log-spread magnitude component, so both the
// well-behaved region and the large-state tails get exercised.
double sample_component(Substream& rng) {
    const double u = rng.uniform();
    if (u < 0.5) return 2.0 * rng.normal();
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return sign * std::pow(10.0, 3.0 * rng.uniform() - 1.0); // magnitude in [0.1, 100]
}

} // namespace

std::vector<ProbeReport> run_taming_probes(const McKeanVlasovModel& model, double h0,
                                           std::size_t n_samples, std::uint64_t seed) {
    if (!std::isfinite(h0) || h0 <= 0.0)
        throw std::invalid_argument("run_taming_probes: h0 must be finite and > 0");
    if (n_samples == 0)
        throw std::invalid_argument("run_taming_probes: need at least one sample");

    const Eigen::Index d = model.dimension;
    NoiseStream stream(seed);
    Substream rng = stream.substream(0xFFFFFFFFu, 0, NoiseChannel::brownian);

    ProbeReport clock{"clock-bound", n_samples, 0, 0.0};
    ProbeReport inverse{"inverse-sqrt-cap", n_samples, 0, 0.0};
    ProbeReport shrink{"no-amplification", n_samples, 0, 0.0};
    ProbeReport proximity{"taming-proximity", n_samples, 0, 0.0};

    Eigen::VectorXd x(d);
    MeasureStats mu;
    mu.mean.resize(d);
    mu.n = 100;
    Coefficients co;
    co.resize(d);

    for (std::size_t s = 0; s < n_samples; ++s) {
        for (Eigen::Index k = 0; k < d; ++k) x[k] = sample_component(rng);
        for (Eigen::Index k = 0; k < d; ++k) mu.mean[k] = sample_component(rng);
        // second raw moment consistent with the mean (Cauchy-Schwarz)
        mu.second_raw_moment = mu.mean.squaredNorm() + 4.0 * rng.uniform();
        const double delta = std::ldexp(1.0, -int(rng.uniform() * 12.0 + 1.0));

        eval_coefficients(model, x, mu, co);
        const double bn = co.drift.norm();
        const double sn = co.diffusion.norm();
        const double cn = co.jump.norm();
        const double xn = x.norm();
        const double sqrt_delta = std::sqrt(delta);

        const double h = step_size_from_norms(h0, bn, sn, cn, xn, model.ell, model.p0);
        record(clock, bn * (1.0 + bn) * h, h0);

        const Eigen::MatrixXd sigma_tamed = tame_diffusion(co.diffusion, x, delta);
        const Eigen::MatrixXd jump_tamed = tame_jump(co.jump, x, co.drift, delta);
        const double stn = sigma_tamed.norm();
        const double ctn = jump_tamed.norm();

        record(inverse, stn * (1.0 + xn), 1.0 / sqrt_delta);
        record(inverse, ctn * (1.0 + xn), 1.0 / sqrt_delta);
        record(inverse, bn * ctn, 1.0 / sqrt_delta);

        record(shrink, stn, sn);
        record(shrink, ctn, cn);

        record(proximity, (co.diffusion - sigma_tamed).norm(),
               sqrt_delta * sn * sn * (1.0 + xn));
        record(proximity, (co.jump - jump_tamed).norm(),
               sqrt_delta * cn * cn * (1.0 + xn + bn));
    }

    return {clock, inverse, shrink, proximity};
}

} // namespace levymv
