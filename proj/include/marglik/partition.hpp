#pragma once

#include "marglik/common.hpp"
#include "marglik/nn.hpp"

#include <cstdint>
#include <vector>

namespace marglik {

// Contiguous disjoint index intervals covering [0, P); order preserved.
struct ParamPartition {
    struct Range {
        int begin = 0;
        int end = 0;  // exclusive
    };
    std::vector<Range> ranges;

    int size() const { return static_cast<int>(ranges.size()); }
};

ParamPartition layerwise_param_partition(const ParamLayout& layout);
ParamPartition diagonal_param_partition(int param_count);
ParamPartition full_param_partition(int param_count);

void validate(const ParamPartition& pp, int param_count);

// One (input index, output index) pair of the NTK index set.
struct PairIndex {
    int n = 0;
    int c = 0;

    bool operator==(const PairIndex& o) const { return n == o.n && c == o.c; }
};

// Disjoint covering batches of input-output pairs. Pair enumeration is
// n-major, c-minor throughout.
struct DataPartition {
    std::vector<std::vector<PairIndex>> batches;
    int num_inputs = 0;
    int num_outputs = 0;

    int size() const { return static_cast<int>(batches.size()); }
    int pair_count() const { return num_inputs * num_outputs; }
};

// Shuffles the NC pairs with the seeded generator and chunks into batches of
// `batch_size` pairs; the final batch may be smaller.
DataPartition random_data_partition(int num_inputs, int num_outputs, int batch_size,
                                    std::uint64_t seed);

// Chunks each output's N pairs separately; no batch mixes outputs.
DataPartition output_wise_partition(int num_inputs, int num_outputs, int batch_size);

// Groups pairs by the label of their input index, shuffles within a group,
// then chunks; no batch mixes labels.
DataPartition class_grouped_partition(int num_inputs, int num_outputs,
                                      const std::vector<int>& labels, int batch_size,
                                      std::uint64_t seed);

// The trivial single-batch partition (all pairs together).
DataPartition single_batch_partition(int num_inputs, int num_outputs);

// Every pair alone.
DataPartition singleton_partition(int num_inputs, int num_outputs);

void validate(const DataPartition& dp);

// True iff every cell of `fine` is contained in some cell of `coarse`.
bool is_refinement(const ParamPartition& fine, const ParamPartition& coarse);
bool is_refinement(const DataPartition& fine, const DataPartition& coarse);

}  // namespace marglik
