#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tilesearch/bitvec.hpp"

namespace tilesearch {

/// Uniform integer in [0, bound) from a raw 64-bit generator. Unlike
/// std::uniform_int_distribution the mapping is fixed, so seeded outputs are
/// identical across standard libraries.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = bound == 0 ? 0 : (~std::uint64_t{0} - bound + 1) % bound;
    for (;;) {
        const std::uint64_t x = rng();
        if (x >= limit) return x % bound;
    }
}

inline BinaryFeature random_feature(std::mt19937_64& rng) {
    BinaryFeature v;
    for (auto& w : v.words) w = rng();
    return v;
}

inline std::vector<BinaryFeature> random_features(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<BinaryFeature> out(n);
    for (auto& v : out) v = random_feature(rng);
    return out;
}

/// Copy of `v` with exactly `distance` distinct, uniformly chosen bits flipped.
inline BinaryFeature flip_random_bits(const BinaryFeature& v, std::uint32_t distance, std::mt19937_64& rng) {
    std::vector<std::uint16_t> positions(kFeatureBits);
    for (std::size_t i = 0; i < kFeatureBits; ++i) positions[i] = static_cast<std::uint16_t>(i);
    BinaryFeature out = v;
    for (std::uint32_t i = 0; i < distance && i < kFeatureBits; ++i) {
        const auto j = i + uniform_below(rng, kFeatureBits - i);
        std::swap(positions[i], positions[j]);
        out.flip_bit(positions[i]);
    }
    return out;
}

} // namespace tilesearch
