#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "error.hpp"

namespace stvm {

using Rng = std::mt19937_64;

/// Derives an independent generator for a named stream from a root seed, so
/// toggling one consumer of randomness never shifts the draws of another.
inline Rng make_stream(std::uint64_t root_seed, std::string_view name) {
    // FNV-1a over the stream name, mixed with the seed through seed_seq.
    std::uint64_t h = 1469598103934665603ull;
    for (char ch : name) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ull;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(root_seed), static_cast<std::uint32_t>(root_seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return Rng(seq);
}

inline std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline void restore_rng_state(Rng& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw DataError("corrupt rng state");
}

template <typename T>
T uniform(Rng& rng, T lo, T hi) {
    if (lo == hi) {
        // keep the stream advancing identically for degenerate ranges
        (void)std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        return lo;
    }
    return static_cast<T>(std::uniform_real_distribution<double>(lo, hi)(rng));
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
    return std::uniform_int_distribution<int>(lo, hi_inclusive)(rng);
}

} // namespace stvm
