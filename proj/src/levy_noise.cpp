#include "levymv/levy_noise.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace levymv {

namespace philox {

namespace {

constexpr std::uint32_t MULT_A = 0xD2511F53u;
constexpr std::uint32_t MULT_B = 0xCD9E8D57u;
constexpr std::uint32_t WEYL_A = 0x9E3779B9u;
constexpr std::uint32_t WEYL_B = 0xBB67AE85u;

inline block round_once(const block& c, const key& k) noexcept {
    const std::uint64_t prod0 = std::uint64_t(MULT_A) * c[0];
    const std::uint64_t prod1 = std::uint64_t(MULT_B) * c[2];
    const auto hi0 = std::uint32_t(prod0 >> 32), lo0 = std::uint32_t(prod0);
    const auto hi1 = std::uint32_t(prod1 >> 32), lo1 = std::uint32_t(prod1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

} // namespace

block encrypt(block counter, key k) noexcept {
    counter = round_once(counter, k);
    for (int r = 1; r < 10; ++r) {
        k[0] += WEYL_A;
        k[1] += WEYL_B;
        counter = round_once(counter, k);
    }
    return counter;
}

} // namespace philox

Substream::Substream(std::uint64_t master_seed, std::uint32_t repetition,
                     std::uint32_t particle, NoiseChannel channel) noexcept
    : key_{std::uint32_t(master_seed), std::uint32_t(master_seed >> 32)} {
    // Channel tag lives in the top bits of the particle word; particle ids
    // stay far below 2^30 in practice.
    prefix_ = {0, 0, particle ^ (std::uint32_t(channel) << 30), repetition};
}

void Substream::refill() noexcept {
    philox::block counter = prefix_;
    counter[0] = std::uint32_t(block_index_);
    counter[1] = std::uint32_t(block_index_ >> 32);
    buf_ = philox::encrypt(counter, key_);
    ++block_index_;
    buf_pos_ = 0;
}

std::uint64_t Substream::next_u64() noexcept {
    if (buf_pos_ > 2) refill();
    const std::uint64_t hi = buf_[buf_pos_];
    const std::uint64_t lo = buf_[buf_pos_ + 1];
    buf_pos_ += 2;
    return (hi << 32) | lo;
}

double Substream::uniform() noexcept {
    // 52 significant bits, offset to the bin centers: never 0, never 1.
    return (double(next_u64() >> 12) + 0.5) * 0x1.0p-52;
}

double Substream::normal() noexcept {
    if (have_spare_) {
        have_spare_ = false;
        return spare_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_normal_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
}

namespace {

void check_gamma_args(double shape, double rate) {
    if (!std::isfinite(shape) || shape <= 0.0)
        throw std::invalid_argument("gamma sampler: shape must be finite and > 0, got " +
                                    std::to_string(shape));
    if (!std::isfinite(rate) || rate <= 0.0)
        throw std::invalid_argument("gamma sampler: rate must be finite and > 0, got " +
                                    std::to_string(rate));
}

} // namespace

double gamma_sample(double shape, double rate, Substream& stream) {
    check_gamma_args(shape, rate);

    // Shape below one: sample at shape+1 and multiply by U^(1/shape).
    // exp(log(u)/shape) underflows to 0 for tiny shapes, which matches the
    // limit law (the variate is almost surely negligible there).
    double boost = 1.0;
    double a = shape;
    if (a < 1.0) {
        boost = std::pow(stream.uniform(), 1.0 / a);
        a += 1.0;
    }

    const double d = a - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        const double x = stream.normal();
        const double t = 1.0 + c * x;
        if (t <= 0.0) continue;
        const double v = t * t * t;
        const double u = stream.uniform();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return boost * d * v / rate;
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return boost * d * v / rate;
    }
}

double bilateral_gamma_increment(double dt, const BilateralGammaParams& params,
                                 ParticleNoise& noise) {
    if (!std::isfinite(dt) || dt <= 0.0)
        throw std::invalid_argument("bilateral_gamma_increment: dt must be finite and > 0, got " +
                                    std::to_string(dt));
    const double a = params.shape * dt;
    const double up = gamma_sample(a, params.rate, noise.gamma_pos);
    const double down = gamma_sample(a, params.rate, noise.gamma_neg);
    return up - down;
}

void levy_increment(double dt, const BilateralGammaParams& params,
                    ParticleNoise& noise, Eigen::Ref<Eigen::VectorXd> out) {
    for (Eigen::Index j = 0; j < out.size(); ++j)
        out[j] = bilateral_gamma_increment(dt, params, noise);
}

void brownian_increment(double dt, ParticleNoise& noise, Eigen::Ref<Eigen::VectorXd> out) {
    if (!std::isfinite(dt) || dt <= 0.0)
        throw std::invalid_argument("brownian_increment: dt must be finite and > 0, got " +
                                    std::to_string(dt));
    const double scale = std::sqrt(dt);
    for (Eigen::Index j = 0; j < out.size(); ++j)
        out[j] = scale * noise.brownian.normal();
}

double levy_measure_moment(double p, const BilateralGammaParams& params) {
    check_gamma_args(params.shape, params.rate);
    if (!std::isfinite(p) || p < 1.0)
        throw std::invalid_argument(
            "levy_measure_moment: p >= 1 required (the measure is not integrable against |z|^p "
            "near zero in the sense this bound uses), got " + std::to_string(p));
    return 2.0 * params.shape * std::tgamma(p) / std::pow(params.rate, p);
}

} // namespace levymv
