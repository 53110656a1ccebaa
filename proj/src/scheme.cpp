#include "levymv/scheme.hpp"

#include "levymv/errors.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace levymv {

double local_step_size(const McKeanVlasovModel& model, const Eigen::VectorXd& x,
                       const MeasureStats& mu, double h0) {
    if (!std::isfinite(h0) || h0 <= 0.0)
        throw std::invalid_argument("local_step_size: h0 must be finite and > 0");
    Coefficients co;
    co.resize(model.dimension);
    eval_coefficients(model, x, mu, co);
    return step_size_from_norms(h0, co.drift.norm(), co.diffusion.norm(), co.jump.norm(),
                                x.norm(), model.ell, model.p0);
}

namespace {

void check_config(const SchemeConfig& cfg) {
    if (!std::isfinite(cfg.delta) || cfg.delta <= 0.0 || cfg.delta > 1.0)
        throw std::invalid_argument("scheme config: delta must lie in (0,1]");
    if (!std::isfinite(cfg.h0) || cfg.h0 <= 0.0)
        throw std::invalid_argument("scheme config: h0 must be finite and > 0");
    if (!std::isfinite(cfg.terminal_time) || cfg.terminal_time <= 0.0)
        throw std::invalid_argument("scheme config: terminal_time must be finite and > 0");
}

// One discretisation level inside the merged-clock driver.  Coefficients are
// frozen at the level's own grid points; noise accumulators collect the
// shared increments drawn between merged events.
struct Level {
    const SchemeConfig* cfg = nullptr;
    Eigen::MatrixXd states; // N x d
    double t_grid = 0.0;
    double boundary = 0.0;
    bool done = false;

    Eigen::MatrixXd drift;                   // N x d, frozen at t_grid
    std::vector<Eigen::MatrixXd> sigma_tamed; // N of d x d
    std::vector<Eigen::MatrixXd> jump_tamed;  // N of d x d
    Eigen::MatrixXd acc_w; // N x d Brownian accumulator over [t_grid, now]
    Eigen::MatrixXd acc_z; // N x d Gamma accumulator

    StepLog log;
    double msd_sum = 0.0;

    // scratch
    Eigen::VectorXd x_buf, dx_buf;
    Coefficients co_buf;
};

void init_level(Level& lv, const SchemeConfig& cfg, const Eigen::MatrixXd& states) {
    lv.cfg = &cfg;
    lv.states = states;
    const Eigen::Index n = states.rows(), d = states.cols();
    lv.drift.resize(n, d);
    lv.sigma_tamed.assign(std::size_t(n), Eigen::MatrixXd(d, d));
    lv.jump_tamed.assign(std::size_t(n), Eigen::MatrixXd(d, d));
    lv.acc_w = Eigen::MatrixXd::Zero(n, d);
    lv.acc_z = Eigen::MatrixXd::Zero(n, d);
    lv.log.step_times.push_back(0.0);
    lv.x_buf.resize(d);
    lv.dx_buf.resize(d);
    lv.co_buf.resize(d);
}

// Evaluate coefficients at the level's current grid point, apply taming,
// pick the ensemble step and cap the next boundary at T.
void freeze(Level& lv, const McKeanVlasovModel& model) {
    const Eigen::Index n = lv.states.rows();
    const MeasureStats mu = ensemble_stats(lv.states);
    const double sqrt_delta = std::sqrt(lv.cfg->delta);
    const double T = lv.cfg->terminal_time;

    double h_min = std::numeric_limits<double>::infinity();
    Eigen::Index argmin = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        lv.x_buf = lv.states.row(i);
        eval_coefficients(model, lv.x_buf, mu, lv.co_buf, lv.log.step_count, i);
        const double bn = lv.co_buf.drift.norm();
        const double sn = lv.co_buf.diffusion.norm();
        const double cn = lv.co_buf.jump.norm();
        const double xn = lv.x_buf.norm();
        const double h =
            step_size_from_norms(lv.cfg->h0, bn, sn, cn, xn, model.ell, model.p0);
        if (h < h_min) {
            h_min = h;
            argmin = i;
        }
        lv.drift.row(i) = lv.co_buf.drift;
        // same algebra as tame_diffusion / tame_jump, inlined to reuse norms
        lv.sigma_tamed[std::size_t(i)] =
            lv.co_buf.diffusion / (1.0 + sqrt_delta * sn * (1.0 + xn));
        lv.jump_tamed[std::size_t(i)] =
            lv.co_buf.jump / (1.0 + sqrt_delta * cn * (1.0 + xn + bn));
    }

    const double step = lv.cfg->delta * h_min;
    if (!std::isfinite(step) || step < lv.cfg->h0 * lv.cfg->delta * 1e-9)
        throw NumericOverflowError("adaptive step size collapsed (coefficients too large)",
                                   lv.log.step_count, argmin);
    lv.boundary = std::min(lv.t_grid + step, T);
    if (!(lv.boundary > lv.t_grid))
        throw NumericOverflowError("adaptive clock stopped making progress", lv.log.step_count,
                                   argmin);
    lv.acc_w.setZero();
    lv.acc_z.setZero();
}

void apply_update(Level& lv, const McKeanVlasovModel& model) {
    const double gap = lv.boundary - lv.t_grid;
    const Eigen::Index n = lv.states.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        lv.dx_buf = lv.drift.row(i).transpose() * gap;
        if (model.has_diffusion)
            lv.dx_buf.noalias() += lv.sigma_tamed[std::size_t(i)] * lv.acc_w.row(i).transpose();
        if (model.has_jumps)
            lv.dx_buf.noalias() += lv.jump_tamed[std::size_t(i)] * lv.acc_z.row(i).transpose();
        lv.states.row(i) += lv.dx_buf.transpose();
        lv.msd_sum += lv.dx_buf.squaredNorm();
    }
    if (!lv.states.allFinite()) {
        Eigen::Index bad = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (!lv.states.row(i).allFinite()) {
                bad = i;
                break;
            }
        throw NumericOverflowError("particle state became non-finite", lv.log.step_count, bad);
    }
    lv.t_grid = lv.boundary;
    ++lv.log.step_count;
    lv.log.step_times.push_back(lv.t_grid);
    if (lv.t_grid >= lv.cfg->terminal_time) {
        lv.done = true;
        lv.log.mean_square_displacement =
            lv.msd_sum / (double(lv.log.step_count) * double(n));
    } else {
        freeze(lv, model);
    }
}

// Interpolated state of one level at the current merged time.
ParticleEnsemble interpolate(const Level& lv, const McKeanVlasovModel& model, double t) {
    ParticleEnsemble snap;
    snap.time = t;
    snap.states = lv.states;
    const double gap = t - lv.t_grid;
    const Eigen::Index n = lv.states.rows();
    Eigen::VectorXd dx(lv.states.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        dx = lv.drift.row(i).transpose() * gap;
        if (model.has_diffusion)
            dx.noalias() += lv.sigma_tamed[std::size_t(i)] * lv.acc_w.row(i).transpose();
        if (model.has_jumps)
            dx.noalias() += lv.jump_tamed[std::size_t(i)] * lv.acc_z.row(i).transpose();
        snap.states.row(i) += dx.transpose();
    }
    return snap;
}

void run_driver(const McKeanVlasovModel& model, const ParticleEnsemble& initial,
                std::vector<Level>& levels, const NoiseStream& noise,
                const BilateralGammaParams& gamma, std::uint32_t repetition,
                std::span<const double> snapshot_times, const SnapshotCallback& on_snapshot) {
    const Eigen::Index n = initial.size(), d = initial.dimension();
    if (n < 1) throw std::invalid_argument("advance: empty initial ensemble");
    if (d != model.dimension)
        throw std::invalid_argument("advance: ensemble dimension does not match model");
    if (initial.time != 0.0)
        throw std::invalid_argument("advance: runs start at time 0");
    if (!initial.states.allFinite())
        throw std::invalid_argument("advance: initial states must be finite");

    const double T = levels.front().cfg->terminal_time;
    double prev = 0.0;
    for (double s : snapshot_times) {
        if (!(s > prev) || s > T)
            throw std::invalid_argument(
                "advance: snapshot times must be strictly increasing inside (0, T]");
        prev = s;
    }

    std::vector<ParticleNoise> particle_noise;
    particle_noise.reserve(std::size_t(n));
    for (Eigen::Index i = 0; i < n; ++i)
        particle_noise.emplace_back(noise, repetition, std::uint32_t(i));

    for (Level& lv : levels) freeze(lv, model);

    Eigen::VectorXd w_buf(d), z_buf(d);
    double t = 0.0;
    std::size_t next_snap = 0;
    std::size_t active = levels.size();
    while (active > 0) {
        double t_event = std::numeric_limits<double>::infinity();
        for (const Level& lv : levels)
            if (!lv.done) t_event = std::min(t_event, lv.boundary);
        if (next_snap < snapshot_times.size())
            t_event = std::min(t_event, snapshot_times[next_snap]);
        if (!(t_event > t))
            throw NumericOverflowError("merged clock stalled", -1, -1);

        const double dt = t_event - t;
        if (model.has_diffusion || model.has_jumps) {
            for (Eigen::Index i = 0; i < n; ++i) {
                if (model.has_diffusion) {
                    brownian_increment(dt, particle_noise[std::size_t(i)], w_buf);
                    for (Level& lv : levels)
                        if (!lv.done) lv.acc_w.row(i) += w_buf.transpose();
                }
                if (model.has_jumps) {
                    levy_increment(dt, gamma, particle_noise[std::size_t(i)], z_buf);
                    for (Level& lv : levels)
                        if (!lv.done) lv.acc_z.row(i) += z_buf.transpose();
                }
            }
        }
        t = t_event;

        // snapshots read the frozen-coefficient interpolation, so they are
        // emitted before any boundary update resets the accumulators
        while (next_snap < snapshot_times.size() && snapshot_times[next_snap] == t) {
            if (on_snapshot) on_snapshot(interpolate(levels.front(), model, t));
            ++next_snap;
        }
        for (Level& lv : levels) {
            if (!lv.done && lv.boundary == t) {
                apply_update(lv, model);
                if (lv.done) --active;
            }
        }
    }
}

AdvanceResult collect(Level&& lv, double T) {
    AdvanceResult out;
    out.ensemble.states = std::move(lv.states);
    out.ensemble.time = T;
    out.log = std::move(lv.log);
    return out;
}

} // namespace

double ensemble_step_size(const McKeanVlasovModel& model, const ParticleEnsemble& ensemble,
                          const SchemeConfig& config) {
    check_config(config);
    if (ensemble.size() == 0)
        throw std::invalid_argument("ensemble_step_size: empty ensemble");
    const MeasureStats mu = ensemble_stats(ensemble);
    double h_min = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x(ensemble.dimension());
    for (Eigen::Index i = 0; i < ensemble.size(); ++i) {
        x = ensemble.states.row(i);
        h_min = std::min(h_min, local_step_size(model, x, mu, config.h0));
    }
    return config.delta * h_min;
}

AdvanceResult advance_to(const McKeanVlasovModel& model, const ParticleEnsemble& initial,
                         const SchemeConfig& config, const NoiseStream& noise,
                         const BilateralGammaParams& gamma, std::uint32_t repetition,
                         std::span<const double> snapshot_times,
                         const SnapshotCallback& on_snapshot) {
    check_config(config);
    std::vector<Level> levels(1);
    init_level(levels[0], config, initial.states);
    run_driver(model, initial, levels, noise, gamma, repetition, snapshot_times, on_snapshot);
    return collect(std::move(levels[0]), config.terminal_time);
}

CoupledResult advance_coupled(const McKeanVlasovModel& model, const ParticleEnsemble& initial,
                              const SchemeConfig& fine, const SchemeConfig& coarse,
                              const NoiseStream& noise, const BilateralGammaParams& gamma,
                              std::uint32_t repetition) {
    check_config(fine);
    check_config(coarse);
    if (fine.delta > coarse.delta)
        throw std::invalid_argument("advance_coupled: fine delta must be <= coarse delta");
    if (fine.terminal_time != coarse.terminal_time)
        throw std::invalid_argument("advance_coupled: levels must share the terminal time");

    std::vector<Level> levels(2);
    init_level(levels[0], fine, initial.states);
    init_level(levels[1], coarse, initial.states);
    run_driver(model, initial, levels, noise, gamma, repetition, {}, {});

    CoupledResult out;
    out.fine = collect(std::move(levels[0]), fine.terminal_time);
    out.coarse = collect(std::move(levels[1]), coarse.terminal_time);
    return out;
}

} // namespace levymv
