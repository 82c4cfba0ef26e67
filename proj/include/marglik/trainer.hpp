#pragma once

#include "marglik/estimators.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace marglik {

enum class WeightOptKind { sgd, adam };
enum class ScheduleKind { constant, cosine };

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct LrSchedule {
    ScheduleKind kind = ScheduleKind::constant;
    double start = 1e-3;
    double end = 1e-3;
};

// Cosine-interpolated learning rate over [0, total_steps).
double lr_at(const LrSchedule& s, int step, int total_steps);

enum class DataPartitionKind { random, output_wise, class_grouped, full };

DataPartitionKind data_partition_kind_from_string(const std::string& s);
std::string to_string(DataPartitionKind k);

struct PartitionConfig {
    DataPartitionKind kind = DataPartitionKind::random;
    int batch_size = 32;   // pairs per batch
    bool drop_last = true; // sample only full-size batches
};

DataPartition build_data_partition(const PartitionConfig& cfg, int num_inputs,
                                   int num_outputs, const std::vector<int>& labels,
                                   std::uint64_t seed);

// Batches of full size only (the partition to sample from under drop_last);
// returns the input unchanged when all batches already match the largest.
DataPartition drop_undersized(const DataPartition& dp);

struct TrainConfig {
    int epochs = 100;
    int weight_batch_size = 32;
    WeightOptKind weight_optimizer = WeightOptKind::adam;
    AdamParams weight_adam;
    double sgd_momentum = 0.9;
    LrSchedule weight_lr{ScheduleKind::cosine, 1e-2, 1e-6};

    AdamParams hyper_adam;
    double hyper_lr_prior = 0.1;
    double hyper_lr_sigma2 = 0.1;
    double hyper_lr_eta = 0.05;
    ScheduleKind hyper_schedule = ScheduleKind::cosine;
    double hyper_lr_end_factor = 0.1;

    int burnin_epochs = 10;
    int hyper_every_k = 1;
    int hyper_steps_per_update = 1;

    EstimatorSpec estimator{EstimatorKind::stochastic, Route::kernel, CurvatureKind::ntk};
    PartitionConfig partition;
    bool learn_prior = true;
    bool learn_sigma2 = false;
    bool learn_eta = false;
    double fd_step_eta = 1e-3;

    Limits limits;
    std::uint64_t seed = 0;
};

struct TrainProblem {
    const Network* net = nullptr;
    LikelihoodKind likelihood = LikelihoodKind::gaussian;
    TransformKind transform = TransformKind::none;
    int transform_samples = 1;
    LabeledData train;
    LabeledData test;
};

struct EpochRecord {
    int epoch = 0;
    double train_logjoint = 0.0;
    MargLikComponents marglik;
    Hyperparameters hyper;
    double hypergrad_ms = 0.0;
    double test_loglik = 0.0;
    double test_metric = 0.0;  // accuracy (classification) or rmse (regression)
};

struct Trajectory {
    std::vector<EpochRecord> records;
};

struct AdamState {
    Vector m, v;
    long t = 0;
};

struct WeightOptState {
    AdamState adam;
    Vector momentum;
};

struct HyperOptState {
    AdamState adam;  // over [prior groups..., log_sigma2?, eta...]
};

// One optimizer step on the scaled negative log joint over the batch.
// Throws NonFiniteLoss with diagnostics if the objective is non-finite.
void weight_step(const TrainProblem& problem, const TrainConfig& cfg, Vector& w,
                 WeightOptState& opt, const std::vector<int>& batch,
                 const Hyperparameters& h, double lr, std::uint64_t transform_seed);

// Samples a batch uniformly from dp_sample, takes one ascent step on the
// stochastic estimate. lr_scale multiplies the configured hyper rates.
// Returns the wall-clock milliseconds of the gradient evaluation.
double hyper_step(const TrainProblem& problem, const TrainConfig& cfg, const Vector& w,
                  Hyperparameters& h, HyperOptState& opt, const DataPartition& dp_sample,
                  std::uint64_t step_key, double lr_scale,
                  std::uint64_t transform_seed);

struct TrainResult {
    TrainedState state;
    Hyperparameters hyper;
    Trajectory trajectory;
};

// Interleaved optimization: weight epochs with periodic hyperparameter
// updates after burn-in; the data partition is resampled every epoch. The
// sink, when set, receives each epoch record as it completes (so a partial
// trajectory survives failures).
TrainResult interleaved_train(const TrainConfig& cfg, const TrainProblem& problem,
                              Vector init_w, Hyperparameters init_h,
                              const std::function<void(const EpochRecord&)>& sink = {});

// Test-split metrics at the supplied weights.
void test_metrics(const TrainProblem& problem, const Vector& w,
                  const Hyperparameters& h, std::uint64_t transform_seed,
                  double* loglik, double* metric);

}  // namespace marglik
