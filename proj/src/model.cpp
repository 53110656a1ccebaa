#include "levymv/model.hpp"

#include "levymv/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace levymv {

MeasureStats ensemble_stats(const Eigen::Ref<const Eigen::MatrixXd>& states) {
    if (states.rows() == 0)
        throw std::invalid_argument("ensemble_stats: empty ensemble");
    MeasureStats mu;
    mu.n = states.rows();
    mu.mean = states.colwise().mean();
    mu.second_raw_moment = states.squaredNorm() / double(states.rows());
    return mu;
}

MeasureStats ensemble_stats(const ParticleEnsemble& ensemble) {
    return ensemble_stats(ensemble.states);
}

void eval_coefficients(const McKeanVlasovModel& model, const Eigen::VectorXd& x,
                       const MeasureStats& mu, Coefficients& out,
                       std::int64_t step, std::int64_t particle) {
    const Eigen::Index d = model.dimension;
    if (x.size() != d)
        throw std::invalid_argument("eval_coefficients: state has dimension " +
                                    std::to_string(x.size()) + ", model expects " +
                                    std::to_string(d));
    if (mu.mean.size() != d)
        throw std::invalid_argument("eval_coefficients: measure mean has dimension " +
                                    std::to_string(mu.mean.size()) + ", model expects " +
                                    std::to_string(d));
    if (out.drift.size() != d) out.resize(d);

    model.drift(x, mu, out.drift);
    if (!out.drift.allFinite())
        throw NumericOverflowError("model '" + model.name + "': drift produced a non-finite value",
                                   step, particle);
    model.diffusion(x, mu, out.diffusion);
    if (!out.diffusion.allFinite())
        throw NumericOverflowError("model '" + model.name +
                                   "': diffusion produced a non-finite value", step, particle);
    model.jump(x, mu, out.jump);
    if (!out.jump.allFinite())
        throw NumericOverflowError("model '" + model.name +
                                   "': jump coefficient produced a non-finite value", step,
                                   particle);
}

namespace {

McKeanVlasovModel paper_ptvd_model() {
    McKeanVlasovModel m;
    m.name = "paper-ptvd";
    m.dimension = 1;
    m.ell = 0.3;
    m.p0 = 8;
    m.drift = [](const Eigen::VectorXd& x, const MeasureStats& mu,
                 Eigen::Ref<Eigen::VectorXd> out) {
        const double xv = x[0], mean = mu.mean[0];
        out[0] = -1.0 - 3.0 * (xv + mean) - xv * std::pow(std::abs(xv), 0.3);
    };
    m.diffusion = [](const Eigen::VectorXd& x, const MeasureStats& mu,
                     Eigen::Ref<Eigen::MatrixXd> out) {
        out(0, 0) = 0.2 * (1.0 + std::pow(std::abs(x[0]), 1.1) + mu.mean[0]);
    };
    m.jump = [](const Eigen::VectorXd& x, const MeasureStats& mu,
                Eigen::Ref<Eigen::MatrixXd> out) {
        out(0, 0) = 0.2 * (x[0] + mu.mean[0]);
    };
    return m;
}

McKeanVlasovModel zero_model() {
    McKeanVlasovModel m;
    m.name = "zero";
    m.dimension = 1;
    m.ell = 1.0;
    m.p0 = 2;
    m.has_diffusion = false;
    m.has_jumps = false;
    m.drift = [](const Eigen::VectorXd&, const MeasureStats&, Eigen::Ref<Eigen::VectorXd> out) {
        out.setZero();
    };
    m.diffusion = [](const Eigen::VectorXd&, const MeasureStats&,
                     Eigen::Ref<Eigen::MatrixXd> out) { out.setZero(); };
    m.jump = m.diffusion;
    return m;
}

McKeanVlasovModel decay_model() {
    McKeanVlasovModel m = zero_model();
    m.name = "decay";
    m.drift = [](const Eigen::VectorXd& x, const MeasureStats&, Eigen::Ref<Eigen::VectorXd> out) {
        out = -x;
    };
    return m;
}

McKeanVlasovModel ou_model(double sigma) {
    McKeanVlasovModel m = decay_model();
    m.name = "ou";
    m.has_diffusion = true;
    m.diffusion = [sigma](const Eigen::VectorXd&, const MeasureStats&,
                          Eigen::Ref<Eigen::MatrixXd> out) {
        out.setZero();
        out.diagonal().setConstant(sigma);
    };
    return m;
}

} // namespace

McKeanVlasovModel make_builtin_model(const std::string& name, double ou_sigma) {
    if (name == "paper-ptvd") return paper_ptvd_model();
    if (name == "zero") return zero_model();
    if (name == "decay") return decay_model();
    if (name == "ou") return ou_model(ou_sigma);
    throw std::invalid_argument("unknown model '" + name +
                                "' (known: paper-ptvd, zero, decay, ou)");
}

} // namespace levymv
