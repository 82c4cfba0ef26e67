#pragma once

#include <cstdint>
#include <vector>

namespace marglik {

// Counter-based randomness: every draw is a pure function of (seed, keys...),
// so shared-noise schemes (common random numbers across hyperparameter
// perturbations) and bitwise reproducibility hold by construction. No state,
// no std::*_distribution (their output is implementation-defined).

std::uint64_t mix64(std::uint64_t x);

// Keyed hash of up to four 64-bit keys.
std::uint64_t keyed_hash(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                         std::uint64_t c = 0);

// Uniform on [0, 1) with 53-bit resolution.
double uniform01(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                 std::uint64_t c = 0);

// Uniform on [-1, 1].
double uniform_sym(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                   std::uint64_t c = 0);

// Standard normal via Box-Muller on two counter draws.
double gauss(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
             std::uint64_t c = 0);

// Deterministic Fisher-Yates permutation of {0,..,n-1}.
std::vector<int> shuffled_indices(int n, std::uint64_t seed);

// Uniform integer in [0, n).
int uniform_index(int n, std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace marglik
