#include "levymv/measure_analysis.hpp"

#include "levymv/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace levymv {

double w2_to_dirac0(const Eigen::Ref<const Eigen::MatrixXd>& states) {
    if (states.rows() == 0) throw std::invalid_argument("w2_to_dirac0: empty sample");
    return std::sqrt(states.squaredNorm() / double(states.rows()));
}

double w2_to_dirac0(const ParticleEnsemble& ensemble) { return w2_to_dirac0(ensemble.states); }

double w2_coupling_bound(const Eigen::Ref<const Eigen::MatrixXd>& states_a,
                         const Eigen::Ref<const Eigen::MatrixXd>& states_b) {
    if (states_a.rows() == 0) throw std::invalid_argument("w2_coupling_bound: empty sample");
    if (states_a.rows() != states_b.rows() || states_a.cols() != states_b.cols())
        throw std::invalid_argument("w2_coupling_bound: samples must have equal shapes");
    return std::sqrt((states_a - states_b).squaredNorm() / double(states_a.rows()));
}

double w2_exact_1d(Eigen::VectorXd a, Eigen::VectorXd b) {
    if (a.size() == 0) throw std::invalid_argument("w2_exact_1d: empty sample");
    if (a.size() != b.size())
        throw std::invalid_argument("w2_exact_1d: samples must have equal size");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return std::sqrt((a - b).squaredNorm() / double(a.size()));
}

double estimate_moment(std::span<const ParticleEnsemble> ensembles, double p) {
    if (!std::isfinite(p) || p <= 0.0)
        throw std::invalid_argument("estimate_moment: p must be finite and > 0");
    if (ensembles.empty()) throw std::invalid_argument("estimate_moment: no repetitions");
    double sum = 0.0;
    std::int64_t count = 0;
    const Eigen::Index d = ensembles.front().dimension();
    for (const ParticleEnsemble& e : ensembles) {
        if (e.size() == 0) throw std::invalid_argument("estimate_moment: empty ensemble");
        if (e.dimension() != d)
            throw std::invalid_argument("estimate_moment: mixed dimensions across repetitions");
        for (Eigen::Index i = 0; i < e.size(); ++i)
            sum += std::pow(e.states.row(i).norm(), p);
        count += e.size();
    }
    return sum / double(count);
}

LevelErrorPoint mse_levels(int level, const Eigen::Ref<const Eigen::MatrixXd>& fine,
                           const Eigen::Ref<const Eigen::MatrixXd>& coarse, int m_repetitions) {
    if (fine.rows() == 0) throw std::invalid_argument("mse_levels: empty sample");
    if (fine.rows() != coarse.rows() || fine.cols() != coarse.cols())
        throw std::invalid_argument("mse_levels: paired samples must have equal shapes");
    LevelErrorPoint out;
    out.level = level;
    out.m_repetitions = m_repetitions;
    out.mse = (fine - coarse).squaredNorm() / double(fine.rows());
    return out;
}

RateFit fit_rate(std::span<const LevelErrorPoint> points) {
    if (points.size() < 2)
        throw std::invalid_argument("fit_rate: need at least two level points");
    const Eigen::Index n = Eigen::Index(points.size());
    Eigen::VectorXd xs(n), ys(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const LevelErrorPoint& pt = points[std::size_t(i)];
        if (!std::isfinite(pt.mse) || pt.mse < 0.0)
            throw std::invalid_argument("fit_rate: MSE values must be finite and non-negative");
        if (pt.mse == 0.0)
            throw DegenerateInputError(
                "fit_rate: zero MSE at level " + std::to_string(pt.level) +
                " (levels indistinguishable; no rate can be fitted)");
        xs[i] = double(pt.level);
        ys[i] = std::log2(pt.mse);
    }
    const double x_mean = xs.mean(), y_mean = ys.mean();
    const Eigen::VectorXd xc = xs.array() - x_mean;
    const Eigen::VectorXd yc = ys.array() - y_mean;
    const double xx = xc.squaredNorm();
    if (xx == 0.0)
        throw std::invalid_argument("fit_rate: need at least two distinct levels");
    const double slope = xc.dot(yc) / xx;
    RateFit fit;
    fit.beta = -0.5 * slope;
    fit.intercept = y_mean - slope * x_mean;
    fit.residual_norm = std::sqrt((yc - slope * xc).squaredNorm() / double(n));
    fit.n_points = int(n);
    return fit;
}

} // namespace levymv
