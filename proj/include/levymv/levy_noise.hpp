#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>

namespace levymv {

// Philox 4x32-10 keyed counter permutation (Salmon, Moraes, Dror, Shaw 2011).
// Stateless: output depends only on (counter, key), which is what makes
// streams addressable and order-independent.
namespace philox {

using block = std::array<std::uint32_t, 4>;
using key   = std::array<std::uint32_t, 2>;

block encrypt(block counter, key k) noexcept;

} // namespace philox

enum class NoiseChannel : std::uint32_t {
    brownian  = 0,
    gamma_pos = 1,
    gamma_neg = 2,
};

// One lazily-consumed stream of variates, fully determined by
// (master seed, repetition, particle, channel).  Identical addresses give
// bit-identical sequences regardless of how many other streams exist or in
// which order they are consumed.
class Substream {
public:
    Substream(std::uint64_t master_seed, std::uint32_t repetition,
              std::uint32_t particle, NoiseChannel channel) noexcept;

    std::uint64_t next_u64() noexcept;

    // Uniform on the open interval (0,1); safe under log().
    double uniform() noexcept;

    // Standard Gaussian via Box-Muller; the second variate of each pair is
    // cached, so consumption alternates one/zero uniform pairs.
    double normal() noexcept;

private:
    void refill() noexcept;

    philox::key key_;
    philox::block prefix_{}; // {block_lo, block_hi, particle|channel, repetition}
    philox::block buf_{};
    std::uint64_t block_index_ = 0;
    int buf_pos_ = 4;
    double spare_normal_ = 0.0;
    bool have_spare_ = false;
};

// Parameters of a centered bilateral Gamma process: increments over dt are
// G+ - G- with independent G+/- ~ Gamma(shape*dt, rate).  Mean 0 by symmetry,
// variance 2*shape*dt/rate^2.
struct BilateralGammaParams {
    double shape = 1.0; // alpha
    double rate  = 5.0; // lambda (inverse scale)
};

// Factory of addressed substreams for one master seed.  Copying is free;
// the object holds no sampler state.
class NoiseStream {
public:
    NoiseStream() = default;
    explicit NoiseStream(std::uint64_t master_seed) : seed_(master_seed) {}

    std::uint64_t master_seed() const noexcept { return seed_; }

    Substream substream(std::uint32_t repetition, std::uint32_t particle,
                        NoiseChannel channel) const noexcept {
        return Substream(seed_, repetition, particle, channel);
    }

private:
    std::uint64_t seed_ = 0;
};

// The three independent channels one particle consumes along one path.
struct ParticleNoise {
    ParticleNoise(const NoiseStream& stream, std::uint32_t repetition, std::uint32_t particle)
        : brownian(stream.substream(repetition, particle, NoiseChannel::brownian)),
          gamma_pos(stream.substream(repetition, particle, NoiseChannel::gamma_pos)),
          gamma_neg(stream.substream(repetition, particle, NoiseChannel::gamma_neg)) {}

    Substream brownian;
    Substream gamma_pos;
    Substream gamma_neg;
};

// Gamma(shape, rate) variate.  Marsaglia-Tsang squeeze for shape >= 1 and the
// power boost G(a) = G(a+1) * U^(1/a) below 1, which stays exact for the very
// small shapes (alpha*dt << 1) the adaptive clock produces.
// Throws std::invalid_argument on non-positive shape or rate.
double gamma_sample(double shape, double rate, Substream& stream);

// Increment of the centered bilateral Gamma process over dt > 0.
// Throws std::invalid_argument on dt <= 0 or bad params.
double bilateral_gamma_increment(double dt, const BilateralGammaParams& params,
                                 ParticleNoise& noise);

// Componentwise bilateral Gamma increments for a d-dimensional driver.
void levy_increment(double dt, const BilateralGammaParams& params,
                    ParticleNoise& noise, Eigen::Ref<Eigen::VectorXd> out);

// Brownian increment over dt: independent N(0, dt) per component.
void brownian_increment(double dt, ParticleNoise& noise, Eigen::Ref<Eigen::VectorXd> out);

// p-th absolute moment of the bilateral Gamma Levy measure,
//   integral |z|^p nu(dz) = 2 * shape * Gamma(p) / rate^p,   p >= 1.
// Below p = 1 the integral is not what a jump-moment bound should use
// (small-jump integrability boundary), so the call is rejected.
double levy_measure_moment(double p, const BilateralGammaParams& params);

} // namespace levymv
