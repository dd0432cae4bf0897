#pragma once

#include <stdexcept>
#include <string>

namespace qexp {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed model/grid/driver definitions.
struct ModelError : Error {
    using Error::Error;
};

// Bad run configuration (unknown preset, missing field, contract misuse).
struct ConfigError : Error {
    using Error::Error;
};

// Resource limits (lattice node budget, basis size vs sample size).
struct CapacityError : Error {
    using Error::Error;
};

// Numerical failure inside an algorithm (search radius, conditioning).
struct NumericsError : Error {
    using Error::Error;
};

// Backward-solver failure; carries the offending time step.
struct SolverError : Error {
    int step;
    SolverError(const std::string& what, int step_index)
        : Error(what + " (time step " + std::to_string(step_index) + ")"), step(step_index) {}
};

}  // namespace qexp
