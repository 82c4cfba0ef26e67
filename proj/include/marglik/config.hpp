#pragma once

#include "marglik/data.hpp"
#include "marglik/trainer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace marglik {

struct DatasetConfig {
    std::string kind = "sinusoid";  // sinusoid | blobs | rotated_blobs | mnist
    int n = 200;
    double noise_sd = 0.1;
    int classes = 3;
    double max_angle = 0.0;
    std::uint64_t seed = 1;
    std::string images;  // mnist IDX paths
    std::string labels;
};

struct NetworkConfig {
    std::vector<int> hidden{24, 24};
    Activation activation = Activation::tanh;
    std::uint64_t init_seed = 0;
};

struct HyperInitConfig {
    PriorMode prior_mode = PriorMode::scalar;
    double log_prior_init = 0.0;
    std::optional<double> log_sigma2_init;
    TransformKind transform = TransformKind::none;
    std::vector<double> eta_init;
    int transform_samples = 8;
    bool learn_prior = true;
    bool learn_sigma2 = false;
    bool learn_eta = false;
};

struct GridEstimatorConfig {
    std::string label;
    EstimatorSpec spec;
    std::optional<PartitionConfig> partition;  // overrides the run partition
    std::string param_partition;               // "", "full", "layerwise", "diagonal"
};

struct GridConfig {
    std::string axis = "log_prior";  // log_prior | log_sigma2 | eta<i>
    double min = -4.0;
    double max = 4.0;
    int points = 17;
    std::vector<GridEstimatorConfig> estimators;
};

struct ParetoCell {
    std::string estimator = "ntk";  // ntk | kfac | ggn_block | exact
    int batch_inputs = 0;           // 0 = full data
    int outputs = 1;                // 1 = output-wise, 0 = all outputs
};

struct ParetoConfig {
    int repetitions = 5;
    std::vector<ParetoCell> cells;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    DatasetConfig dataset;
    NetworkConfig network;
    LikelihoodKind likelihood = LikelihoodKind::gaussian;
    HyperInitConfig hyper;
    TrainConfig train;  // includes estimator spec, partition, limits
    GridConfig grid;
    ParetoConfig pareto;
    std::string state_file;  // optional prefix of a serialized trained state
};

// Parses and schema-validates a config document; unknown keys are rejected.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config_file(const std::string& path);

// Initial hyperparameters for a network under this config.
Hyperparameters initial_hyperparameters(const RunConfig& cfg, const Network& net);

// The resolved config echoed back as JSON (written to meta.json).
std::string config_to_json(const RunConfig& cfg);

}  // namespace marglik
