// Exception types shared across the library. Each carries a formatted
// message naming the offending quantity.
#pragma once

#include <stdexcept>
#include <string>

namespace icl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A covariance input failed the symmetric positive-definite check.
struct NonPSDCovariance : Error {
    NonPSDCovariance(const std::string& which, double min_eigenvalue)
        : Error(which + " is not symmetric positive-definite (min eigenvalue " +
                std::to_string(min_eigenvalue) + ")"),
          matrix_name(which),
          min_eig(min_eigenvalue) {}
    std::string matrix_name;
    double min_eig;
};

struct WeightsNotNormalized : Error {
    explicit WeightsNotNormalized(double deviation)
        : Error("task weights do not sum to 1 (|sum-1| = " + std::to_string(deviation) + ")"),
          abs_deviation(deviation) {}
    double abs_deviation;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

struct SingularSigmaX : Error {
    using Error::Error;
};

// Carries a condition-number estimate of the matrix that failed the solve guard.
struct SingularW : Error {
    explicit SingularW(double condition)
        : Error("W is numerically singular (condition estimate " + std::to_string(condition) + ")"),
          condition_estimate(condition) {}
    double condition_estimate;
};

struct DivergenceDetected : Error {
    using Error::Error;
};

struct DegenerateGaps : Error {
    using Error::Error;
};

struct MeansNotZero : Error {
    using Error::Error;
};

// Config / JSON parse failure; message names the offending key.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace icl
