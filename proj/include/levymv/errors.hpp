#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace levymv {

// Raised when a model coefficient or a particle state stops being finite,
// or when the adaptive clock collapses.  Carries enough context to locate
// the failure inside a run.
class NumericOverflowError : public std::runtime_error {
public:
    NumericOverflowError(std::string what, std::int64_t step, std::int64_t particle)
        : std::runtime_error(std::move(what)), step_index(step), particle_index(particle) {}

    std::int64_t step_index;     // -1 when not tied to a scheme step
    std::int64_t particle_index; // -1 when not tied to a particle
};

// Raised when a statistical fit receives input it cannot use
// (e.g. a zero mean-square error, whose log is undefined).
class DegenerateInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace levymv
