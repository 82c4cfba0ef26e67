#include "marglik/partition.hpp"

#include "marglik/rng.hpp"

#include <algorithm>
#include <map>
#include <string>

namespace marglik {

ParamPartition layerwise_param_partition(const ParamLayout& layout) {
    ParamPartition pp;
    for (std::size_t l = 0; l < layout.sizes.size(); ++l)
        pp.ranges.push_back({layout.offsets[l], layout.offsets[l] + layout.sizes[l]});
    return pp;
}

ParamPartition diagonal_param_partition(int param_count) {
    ParamPartition pp;
    pp.ranges.reserve(static_cast<std::size_t>(param_count));
    for (int p = 0; p < param_count; ++p) pp.ranges.push_back({p, p + 1});
    return pp;
}

ParamPartition full_param_partition(int param_count) {
    return ParamPartition{{{0, param_count}}};
}

void validate(const ParamPartition& pp, int param_count) {
    int expected = 0;
    for (const auto& r : pp.ranges) {
        if (r.begin != expected || r.end <= r.begin)
            throw MarglikError("param partition: ranges must be contiguous, ordered, nonempty");
        expected = r.end;
    }
    if (expected != param_count)
        throw MarglikError("param partition covers [0," + std::to_string(expected) +
                           ") but P = " + std::to_string(param_count));
}

namespace {
// pairs in n-major, c-minor order
std::vector<PairIndex> all_pairs(int num_inputs, int num_outputs) {
    std::vector<PairIndex> pairs;
    pairs.reserve(static_cast<std::size_t>(num_inputs) * num_outputs);
    for (int n = 0; n < num_inputs; ++n)
        for (int c = 0; c < num_outputs; ++c) pairs.push_back({n, c});
    return pairs;
}

void chunk_into(DataPartition& dp, const std::vector<PairIndex>& pairs, int batch_size) {
    for (std::size_t i = 0; i < pairs.size(); i += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(pairs.size(), i + static_cast<std::size_t>(batch_size));
        dp.batches.emplace_back(pairs.begin() + static_cast<long>(i),
                                pairs.begin() + static_cast<long>(end));
    }
}
}  // namespace

DataPartition random_data_partition(int num_inputs, int num_outputs, int batch_size,
                                    std::uint64_t seed) {
    const int total = num_inputs * num_outputs;
    if (batch_size < 1) throw MarglikError("batch_size must be >= 1");
    DataPartition dp{{}, num_inputs, num_outputs};
    const std::vector<PairIndex> pairs = all_pairs(num_inputs, num_outputs);
    std::vector<PairIndex> shuffled(pairs.size());
    const std::vector<int> order = shuffled_indices(total, seed);
    for (int i = 0; i < total; ++i)
        shuffled[static_cast<std::size_t>(i)] = pairs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    chunk_into(dp, shuffled, batch_size);
    return dp;
}

DataPartition output_wise_partition(int num_inputs, int num_outputs, int batch_size) {
    if (batch_size < 1) throw MarglikError("batch_size must be >= 1");
    DataPartition dp{{}, num_inputs, num_outputs};
    for (int c = 0; c < num_outputs; ++c) {
        std::vector<PairIndex> pairs;
        pairs.reserve(static_cast<std::size_t>(num_inputs));
        for (int n = 0; n < num_inputs; ++n) pairs.push_back({n, c});
        chunk_into(dp, pairs, batch_size);
    }
    return dp;
}

DataPartition class_grouped_partition(int num_inputs, int num_outputs,
                                      const std::vector<int>& labels, int batch_size,
                                      std::uint64_t seed) {
    if (static_cast<int>(labels.size()) != num_inputs)
        throw BadLabels("labels length " + std::to_string(labels.size()) +
                        " does not match N = " + std::to_string(num_inputs));
    if (batch_size < 1) throw MarglikError("batch_size must be >= 1");
    // group inputs by label, labels in ascending order
    std::map<int, std::vector<int>> groups;
    for (int n = 0; n < num_inputs; ++n) groups[labels[static_cast<std::size_t>(n)]].push_back(n);
    DataPartition dp{{}, num_inputs, num_outputs};
    std::uint64_t group_key = 0;
    for (const auto& [label, ns] : groups) {
        (void)label;
        std::vector<PairIndex> pairs;
        pairs.reserve(ns.size() * static_cast<std::size_t>(num_outputs));
        for (int n : ns)
            for (int c = 0; c < num_outputs; ++c) pairs.push_back({n, c});
        const std::vector<int> order =
            shuffled_indices(static_cast<int>(pairs.size()), keyed_hash(seed, group_key++));
        std::vector<PairIndex> shuffled(pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i)
            shuffled[i] = pairs[static_cast<std::size_t>(order[i])];
        chunk_into(dp, shuffled, batch_size);
    }
    return dp;
}

DataPartition single_batch_partition(int num_inputs, int num_outputs) {
    DataPartition dp{{}, num_inputs, num_outputs};
    std::vector<PairIndex> pairs = all_pairs(num_inputs, num_outputs);
    if (!pairs.empty()) dp.batches.push_back(std::move(pairs));
    return dp;
}

DataPartition singleton_partition(int num_inputs, int num_outputs) {
    DataPartition dp{{}, num_inputs, num_outputs};
    for (const auto& p : all_pairs(num_inputs, num_outputs))
        dp.batches.push_back({p});
    return dp;
}

void validate(const DataPartition& dp) {
    std::vector<char> seen(static_cast<std::size_t>(dp.pair_count()), 0);
    for (const auto& batch : dp.batches) {
        if (batch.empty()) throw MarglikError("data partition: empty batch");
        for (const auto& p : batch) {
            if (p.n < 0 || p.n >= dp.num_inputs || p.c < 0 || p.c >= dp.num_outputs)
                throw MarglikError("data partition: pair index out of range");
            const std::size_t key = static_cast<std::size_t>(p.n) *
                                        static_cast<std::size_t>(dp.num_outputs) +
                                    static_cast<std::size_t>(p.c);
            if (seen[key]) throw MarglikError("data partition: duplicate pair");
            seen[key] = 1;
        }
    }
    for (char s : seen)
        if (!s) throw MarglikError("data partition: does not cover the index set");
}

namespace {
// Generic refinement check over cells given as element-key lists.
bool refines(const std::vector<std::vector<long>>& fine,
             const std::vector<std::vector<long>>& coarse, long universe) {
    std::vector<int> cell_of(static_cast<std::size_t>(universe), -1);
    for (std::size_t i = 0; i < coarse.size(); ++i)
        for (long e : coarse[i]) cell_of[static_cast<std::size_t>(e)] = static_cast<int>(i);
    for (const auto& cell : fine) {
        if (cell.empty()) continue;
        const int target = cell_of[static_cast<std::size_t>(cell.front())];
        if (target < 0) return false;
        for (long e : cell)
            if (cell_of[static_cast<std::size_t>(e)] != target) return false;
    }
    return true;
}
}  // namespace

bool is_refinement(const ParamPartition& fine, const ParamPartition& coarse) {
    long universe = 0;
    for (const auto& r : coarse.ranges) universe = std::max<long>(universe, r.end);
    for (const auto& r : fine.ranges) universe = std::max<long>(universe, r.end);
    auto cells = [](const ParamPartition& pp) {
        std::vector<std::vector<long>> out;
        for (const auto& r : pp.ranges) {
            std::vector<long> cell;
            for (int p = r.begin; p < r.end; ++p) cell.push_back(p);
            out.push_back(std::move(cell));
        }
        return out;
    };
    return refines(cells(fine), cells(coarse), universe);
}

bool is_refinement(const DataPartition& fine, const DataPartition& coarse) {
    if (fine.num_inputs != coarse.num_inputs || fine.num_outputs != coarse.num_outputs)
        return false;
    const long universe = static_cast<long>(fine.num_inputs) * fine.num_outputs;
    auto cells = [](const DataPartition& dp) {
        std::vector<std::vector<long>> out;
        for (const auto& batch : dp.batches) {
            std::vector<long> cell;
            for (const auto& p : batch)
                cell.push_back(static_cast<long>(p.n) * dp.num_outputs + p.c);
            out.push_back(std::move(cell));
        }
        return out;
    };
    return refines(cells(fine), cells(coarse), universe);
}

}  // namespace marglik
