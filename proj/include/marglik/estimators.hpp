#pragma once

#include "marglik/curvature.hpp"
#include "marglik/partition.hpp"
#include "marglik/probmodel.hpp"

#include <optional>
#include <string>

namespace marglik {

// Decomposed log marginal likelihood estimate. The logdet_term carries its
// sign (it is the full -1/2 log|...| contribution plus any log|P0| bookkeeping
// of the bound at hand); total always recomposes exactly from the parts.
struct MargLikComponents {
    double log_lik = 0.0;
    double log_prior = 0.0;
    double logdet_term = 0.0;
    double constant = 0.0;  // (P/2) log 2pi
    double total = 0.0;
    std::string estimator_tag;
    std::string partition_meta;
};

struct HyperGradient {
    Vector d_log_prior_precision;        // per prior group, log domain
    std::optional<double> d_log_sigma2;  // gaussian likelihood only
    std::optional<Vector> d_eta;
    std::string method_tag;              // "analytic" or "finite_difference"
};

// Network at a mode plus the model pieces every estimator needs.
struct Model {
    const Network* net = nullptr;
    Vector mode;
    LikelihoodKind likelihood = LikelihoodKind::gaussian;
    TransformKind transform = TransformKind::none;
    int transform_samples = 1;
    std::uint64_t transform_seed = 0;
    Limits limits;
};

Predictor make_predictor(const Model& model, const Hyperparameters& h);

// Determinant route: parametric works on the P x P form, kernel on the
// NC x NC form. automatic picks min(P, NC) and falls back if a cap bites.
enum class Route { automatic, parametric, kernel };

// Exact linearized-Laplace log marginal likelihood.
MargLikComponents exact_la(const Model& model, const LabeledData& data,
                           const Hyperparameters& h, Route route = Route::automatic);

// Block-diagonal parametric lower bound for a parameter partition; equals
// exact_la for the full partition.
MargLikComponents parametric_bound(const Model& model, const LabeledData& data,
                                   const Hyperparameters& h, const ParamPartition& pp);

// KFAC variant: per-layer Kronecker-factor log-determinants (not a
// theoretically guaranteed bound; measured, not asserted).
MargLikComponents parametric_bound_kfac(const Model& model, const LabeledData& data,
                                        const Hyperparameters& h);

// Data-subset NTK lower bound over a partition of input-output pairs.
MargLikComponents ntk_subset_bound(const Model& model, const LabeledData& data,
                                   const Hyperparameters& h, const DataPartition& dp);

// Parametric form of the same bound (identical value).
MargLikComponents parametric_subset_bound(const Model& model, const LabeledData& data,
                                          const Hyperparameters& h,
                                          const DataPartition& dp);

// Doubly lower bound: data partition plus parameter partition (or KFAC).
MargLikComponents doubly_bound(const Model& model, const LabeledData& data,
                               const Hyperparameters& h, const DataPartition& dp,
                               const ParamPartition& pp);
MargLikComponents doubly_bound_kfac(const Model& model, const LabeledData& data,
                                    const Hyperparameters& h, const DataPartition& dp);

// Single-batch stochastic estimate: scaled data log-likelihood over the
// batch's inputs plus the M-scaled block log-determinant.
struct StochasticConfig {
    Route route = Route::kernel;         // kernel -> NTK block, parametric -> GGN
    const ParamPartition* pp = nullptr;  // parametric route block structure (null = full)
    bool use_kfac = false;               // parametric route with KFAC factors
};

MargLikComponents stochastic_estimate(const Model& model, const LabeledData& data,
                                      const Hyperparameters& h, const DataPartition& dp,
                                      int m, const StochasticConfig& sc = {});

enum class EstimatorKind {
    exact,
    parametric,
    ntk_subset,
    parametric_subset,
    doubly,
    stochastic
};

EstimatorKind estimator_kind_from_string(const std::string& s);
std::string to_string(EstimatorKind k);

struct EstimatorSpec {
    EstimatorKind kind = EstimatorKind::exact;
    Route route = Route::automatic;
    CurvatureKind curvature = CurvatureKind::ggn_full;
};

struct EstimatorInputs {
    const ParamPartition* pp = nullptr;
    const DataPartition* dp = nullptr;
    int batch = -1;  // sampled batch index, stochastic only
};

// Single dispatcher used by the CLI, the trainer, and finite differences.
MargLikComponents evaluate_estimator(const EstimatorSpec& spec, const Model& model,
                                     const LabeledData& data, const Hyperparameters& h,
                                     const EstimatorInputs& inputs);

enum class GradMethod { analytic, finite_difference };

struct GradientRequest {
    bool prior = true;
    bool sigma2 = false;
    bool eta = false;
    GradMethod method = GradMethod::analytic;  // eta is always finite differences
    double fd_step_log = 1e-4;                 // log-precision / log-sigma2 FD step
    double fd_step_eta = 1e-3;
};

// Gradient of the estimator total with respect to the requested
// hyperparameters. Precision and sigma2 gradients are analytic (solve-based,
// no explicit inverses); eta uses central finite differences with shared
// transformation noise.
HyperGradient hyper_gradient(const EstimatorSpec& spec, const Model& model,
                             const LabeledData& data, const Hyperparameters& h,
                             const EstimatorInputs& inputs, const GradientRequest& req);

// Full-data log likelihood at the mode under the (possibly invariant)
// predictor; `input_subset` restricts to those inputs, `scale` multiplies.
double data_log_lik(const Model& model, const LabeledData& data,
                    const Hyperparameters& h, const std::vector<int>* input_subset,
                    double scale);

}  // namespace marglik
