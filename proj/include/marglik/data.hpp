#pragma once

#include "marglik/probmodel.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace marglik {

// Full dataset with a train/test split. Generators emit n training points
// plus round(n/4) held-out test points, all seeded.
struct Dataset {
    Matrix inputs;                  // rows are samples
    Matrix targets_real;            // regression targets, empty for classification
    std::vector<int> targets_class; // class indices, empty for regression
    std::vector<int> train_idx;
    std::vector<int> test_idx;

    bool classification() const { return !targets_class.empty(); }
    LabeledData split(const std::vector<int>& idx) const;
    LabeledData train() const { return split(train_idx); }
    LabeledData test() const { return split(test_idx); }
};

// y = sin(2 pi x) + N(0, noise_sd^2), x uniform on [0,1].
Dataset gen_sinusoid(int n, double noise_sd, std::uint64_t seed);

// Isotropic Gaussian clusters with centers at distinct radii (so the class
// stays identifiable under rotation).
Dataset gen_blobs(int n, int classes, std::uint64_t seed);

// Blobs with a per-sample rotation by U[-max_angle, max_angle]; rotation is
// the ground-truth invariance. max_angle = 0 reproduces gen_blobs exactly.
Dataset gen_rotated_blobs(int n, int classes, double max_angle, std::uint64_t seed);

// IDX-format MNIST: magic 0x00000803 (images) / 0x00000801 (labels),
// big-endian headers, pixels scaled to [0,1], flattened to 784. `subset`
// samples without replacement; max_angle > 0 rotates each image by
// U[-max_angle, max_angle] with the bilinear image rotation.
Dataset load_idx_mnist(const std::string& images_path, const std::string& labels_path,
                       int subset, std::uint64_t seed, double max_angle = 0.0);

}  // namespace marglik
