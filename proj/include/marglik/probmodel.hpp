#pragma once

#include "marglik/common.hpp"
#include "marglik/nn.hpp"

#include <optional>
#include <string>
#include <vector>

namespace marglik {

enum class LikelihoodKind { gaussian, categorical };

LikelihoodKind likelihood_from_string(const std::string& s);
std::string to_string(LikelihoodKind k);

struct Likelihood {
    LikelihoodKind kind = LikelihoodKind::gaussian;
    double sigma2 = 1.0;  // observation noise, gaussian only
};

// log p(y | f): Gaussian density or log-softmax.
double log_lik(const Likelihood& lik, const Vector& f, const Vector& y);
double log_lik(const Likelihood& lik, const Vector& f, int y);

// d log p / d f (used by the weight trainer).
Vector lik_grad(const Likelihood& lik, const Vector& f, const Vector& y);
Vector lik_grad(const Likelihood& lik, const Vector& f, int y);

// Lambda = -d^2 log p / d f^2: I/sigma2 (gaussian) or diag(p) - p p^T
// (categorical). PSD for both.
Matrix lik_hessian(const Likelihood& lik, const Vector& f);

enum class PriorMode { scalar, layerwise, per_parameter };

PriorMode prior_mode_from_string(const std::string& s);
std::string to_string(PriorMode m);

// Diagonal zero-mean Gaussian prior; precisions stored in the log domain.
struct PriorPrecision {
    PriorMode mode = PriorMode::scalar;
    Vector log_values;  // length 1, L, or P
};

// Expansion of exp(log_values) onto the flat parameter diagonal of P0.
Vector precision_diagonal(const PriorPrecision& prior, const ParamLayout& layout);

// log|P0| = sum over all P coordinates of the log precision.
double prior_logdet(const PriorPrecision& prior, const ParamLayout& layout);

// log N(w; 0, P0^{-1}) = 1/2 log|P0| - P/2 log 2pi - 1/2 w^T P0 w.
double log_prior(const PriorPrecision& prior, const ParamLayout& layout,
                 const Vector& w);

struct Hyperparameters {
    PriorPrecision prior;
    std::optional<double> log_sigma2;  // regression only
    std::optional<Vector> eta;         // invariance amplitudes
};

// Inputs with either regression targets or class indices; the estimator-facing
// view of a dataset split.
struct LabeledData {
    Matrix x;                 // N x D, rows are samples
    Matrix y;                 // N x C regression targets (gaussian)
    std::vector<int> labels;  // class indices (categorical)

    bool classification() const { return !labels.empty(); }
    int size() const { return static_cast<int>(x.rows()); }
};

// Likelihood with sigma2 resolved from the hyperparameters.
Likelihood resolve_likelihood(LikelihoodKind kind, const Hyperparameters& h);

// Number of per-layer parameters covered by each log-precision entry.
Vector precision_group_sizes(const PriorPrecision& prior, const ParamLayout& layout);

}  // namespace marglik
