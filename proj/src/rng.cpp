#include "marglik/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace marglik {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

std::uint64_t mix64(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t keyed_hash(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                         std::uint64_t c) {
    std::uint64_t h = mix64(seed ^ 0x2545f4914f6cdd1dULL);
    h = mix64(h ^ a);
    h = mix64(h ^ b);
    h = mix64(h ^ c);
    return h;
}

double uniform01(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                 std::uint64_t c) {
    return static_cast<double>(keyed_hash(seed, a, b, c) >> 11) * 0x1.0p-53;
}

double uniform_sym(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                   std::uint64_t c) {
    return 2.0 * uniform01(seed, a, b, c) - 1.0;
}

double gauss(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
             std::uint64_t c) {
    // Two sub-draws keyed below the caller's keys.
    const double u1 = uniform01(keyed_hash(seed, a, b, c), 1);
    const double u2 = uniform01(keyed_hash(seed, a, b, c), 2);
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));  // 1-u1 in (0,1]
    return r * std::cos(kTwoPi * u2);
}

std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        const int j = uniform_index(i + 1, seed, static_cast<std::uint64_t>(i));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    return idx;
}

int uniform_index(int n, std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    if (n < 1) throw std::invalid_argument("uniform_index: empty range");
    // 64-bit hash modulo n; bias is ~n/2^64, irrelevant for reproducibility.
    return static_cast<int>(keyed_hash(seed, a, b, 0x71c3) % static_cast<std::uint64_t>(n));
}

}  // namespace marglik
