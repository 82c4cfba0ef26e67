#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace marglik {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct MarglikError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimMismatch : MarglikError {
    using MarglikError::MarglikError;
};

struct NotSymmetric : MarglikError {
    using MarglikError::MarglikError;
};

// Cholesky failure after the single allowed jitter escalation. `pivot` is the
// row/column index of the first non-positive pivot.
struct NotPositiveDefinite : MarglikError {
    NotPositiveDefinite(const std::string& msg, int pivot_index)
        : MarglikError(msg), pivot(pivot_index) {}
    int pivot;
};

struct EigenFailure : MarglikError {
    using MarglikError::MarglikError;
};

struct BadShape : MarglikError {
    using MarglikError::MarglikError;
};

struct BadTarget : MarglikError {
    using MarglikError::MarglikError;
};

struct BadLabels : MarglikError {
    using MarglikError::MarglikError;
};

struct MemoryCapExceeded : MarglikError {
    using MarglikError::MarglikError;
};

struct UnsupportedLayer : MarglikError {
    using MarglikError::MarglikError;
};

struct NotDifferentiable : MarglikError {
    using MarglikError::MarglikError;
};

struct NonFiniteLoss : MarglikError {
    using MarglikError::MarglikError;
};

struct BadMagic : MarglikError {
    using MarglikError::MarglikError;
};

struct Truncated : MarglikError {
    using MarglikError::MarglikError;
};

struct CountMismatch : MarglikError {
    using MarglikError::MarglikError;
};

struct ConfigError : MarglikError {
    using MarglikError::MarglikError;
};

}  // namespace marglik
