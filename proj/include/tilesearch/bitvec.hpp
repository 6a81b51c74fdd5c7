#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tilesearch {

static_assert(std::endian::native == std::endian::little,
              "packed feature files are mapped directly; little-endian hosts only");

inline constexpr std::size_t kFeatureBits = 512;
inline constexpr std::size_t kFeatureBytes = kFeatureBits / 8;
inline constexpr std::size_t kFeatureWords = kFeatureBits / 64;

/// Number of differing bits between two features, always in [0, 512].
using HammingDistance = std::uint32_t;

/// 512-bit binary feature. Bit i lives in byte i/8 at bit position i%8
/// (LSB first), which on a little-endian host is also bit i%64 of word i/64.
/// The in-memory layout is exactly the 64-byte canonical serialization.
struct alignas(64) BinaryFeature {
    std::array<std::uint64_t, kFeatureWords> words{};

    static BinaryFeature zeros() { return {}; }
    static BinaryFeature ones();

    bool bit(std::size_t i) const { return (words[i >> 6] >> (i & 63)) & 1u; }

    void set_bit(std::size_t i, bool value = true) {
        const std::uint64_t mask = std::uint64_t{1} << (i & 63);
        if (value) {
            words[i >> 6] |= mask;
        } else {
            words[i >> 6] &= ~mask;
        }
    }

    void flip_bit(std::size_t i) { words[i >> 6] ^= std::uint64_t{1} << (i & 63); }

    BinaryFeature complement() const;
    std::uint32_t popcount() const;

    std::array<std::uint8_t, kFeatureBytes> serialize() const;
    static BinaryFeature deserialize(std::span<const std::uint8_t> bytes);

    /// 128 lowercase hex characters, byte 0 first.
    std::string to_hex() const;
    static BinaryFeature from_hex(std::string_view hex);

    friend bool operator==(const BinaryFeature&, const BinaryFeature&) = default;
};

static_assert(sizeof(BinaryFeature) == kFeatureBytes);

inline HammingDistance hamming(const BinaryFeature& a, const BinaryFeature& b) {
    HammingDistance d = 0;
    for (std::size_t w = 0; w < kFeatureWords; ++w) {
        d += static_cast<HammingDistance>(std::popcount(a.words[w] ^ b.words[w]));
    }
    return d;
}

/// Distances from `query` to every feature of `block`, written to `out`.
/// `out.size()` must equal `block.size()`.
void bulk_hamming(const BinaryFeature& query, std::span<const BinaryFeature> block,
                  std::span<HammingDistance> out);

std::vector<HammingDistance> bulk_hamming(const BinaryFeature& query,
                                          std::span<const BinaryFeature> block);

/// Byte-level entry point: `packed` must hold exactly `n` 64-byte records.
std::vector<HammingDistance> bulk_hamming(const BinaryFeature& query,
                                          std::span<const std::uint8_t> packed,
                                          std::size_t n);

} // namespace tilesearch
