#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace twostage {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Rank-deficient design matrix or non-invertible system matrix.
class SingularSystemError : public Error {
public:
    using Error::Error;
};

// Iterative fit failed to converge within the iteration budget.
// Carries the last iterate so callers can inspect it.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& msg, Eigen::VectorXd last)
        : Error(msg), last_coefficients(std::move(last)) {}
    Eigen::VectorXd last_coefficients;
};

// Coefficients ran away (separation, monotone likelihood).
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Invalid input for an operation (negative weight, bad dimension, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// A stratum contributing to a design-based variance has a single PSU.
class LonelyPsuError : public Error {
public:
    using Error::Error;
};

// Non-finite intermediate value in a numerical routine.
class NumericalError : public Error {
public:
    using Error::Error;
};

// Malformed configuration file or invalid option combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed or inconsistent input data (CSV schema violations, ...).
class DataError : public Error {
public:
    using Error::Error;
};

// Simulation scenario aborted (too many failed replicates).
class SimulationError : public Error {
public:
    using Error::Error;
};

}  // namespace twostage
