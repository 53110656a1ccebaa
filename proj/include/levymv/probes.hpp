#pragma once

#include "levymv/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace levymv {

// Result of checking one structural bound of the scheme over random inputs.
struct ProbeReport {
    std::string condition;
    std::size_t samples = 0;
    std::size_t violations = 0; // ratio above 1 + 1e-12
    double worst_ratio = 0.0;   // max over samples of (measured / allowed)
};

// Samples random (state, measure, delta) triples — mixing a Gaussian bulk
// with log-spread magnitudes up to 1e2 and deltas down to 2^-12 — and checks
// the bounds the scheme's construction promises:
//   clock      |b| (1+|b|) h(x,mu)          <= h0
//   inverse    tamed |sigma| (1+|x|)        <= delta^-1/2
//              tamed |c| (1+|x|),
//              |b| tamed |c|                <= delta^-1/2
//   shrink     tamed norms never exceed the raw norms
//   proximity  |sigma - tamed| <= sqrt(delta) |sigma|^2 (1+|x|)
//              |c - tamed|     <= sqrt(delta) |c|^2 (1+|x|+|b|)
// Reports one entry per condition family: "clock-bound", "inverse-sqrt-cap",
// "no-amplification", "taming-proximity".
std::vector<ProbeReport> run_taming_probes(const McKeanVlasovModel& model, double h0,
                                           std::size_t n_samples, std::uint64_t seed);

} // namespace levymv
