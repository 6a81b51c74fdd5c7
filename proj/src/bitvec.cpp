#include "tilesearch/bitvec.hpp"

#include <cstring>

#include "tilesearch/error.hpp"

namespace tilesearch {

const char* error_code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kLengthMismatch: return "length_mismatch";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kDuplicateId: return "duplicate_id";
    case ErrorCode::kSealed: return "sealed";
    case ErrorCode::kCorruptFile: return "corrupt_file";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBounds: return "bounds";
    case ErrorCode::kEmptyGrid: return "empty_grid";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kShape: return "shape";
    }
    return "unknown";
}

BinaryFeature BinaryFeature::ones() {
    BinaryFeature v;
    v.words.fill(~std::uint64_t{0});
    return v;
}

BinaryFeature BinaryFeature::complement() const {
    BinaryFeature v;
    for (std::size_t w = 0; w < kFeatureWords; ++w) {
        v.words[w] = ~words[w];
    }
    return v;
}

std::uint32_t BinaryFeature::popcount() const {
    std::uint32_t n = 0;
    for (auto w : words) {
        n += static_cast<std::uint32_t>(std::popcount(w));
    }
    return n;
}

std::array<std::uint8_t, kFeatureBytes> BinaryFeature::serialize() const {
    std::array<std::uint8_t, kFeatureBytes> out{};
    for (std::size_t i = 0; i < kFeatureBytes; ++i) {
        out[i] = static_cast<std::uint8_t>(words[i / 8] >> (8 * (i % 8)));
    }
    return out;
}

BinaryFeature BinaryFeature::deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() != kFeatureBytes) {
        throw Error(ErrorCode::kLengthMismatch,
                    "feature must be exactly 64 bytes, got " + std::to_string(bytes.size()));
    }
    BinaryFeature v;
    for (std::size_t i = 0; i < kFeatureBytes; ++i) {
        v.words[i / 8] |= std::uint64_t{bytes[i]} << (8 * (i % 8));
    }
    return v;
}

std::string BinaryFeature::to_hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * kFeatureBytes);
    for (auto b : serialize()) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 0xf]);
    }
    return out;
}

namespace {
int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}
} // namespace

BinaryFeature BinaryFeature::from_hex(std::string_view hex) {
    if (hex.size() != 2 * kFeatureBytes) {
        throw Error(ErrorCode::kLengthMismatch, "hex feature must have 128 characters");
    }
    std::array<std::uint8_t, kFeatureBytes> bytes{};
    for (std::size_t i = 0; i < kFeatureBytes; ++i) {
        const int hi = hex_value(hex[2 * i]);
        const int lo = hex_value(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) {
            throw Error(ErrorCode::kInvalidArgument, "invalid hex digit in feature");
        }
        bytes[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return deserialize(bytes);
}

void bulk_hamming(const BinaryFeature& query, std::span<const BinaryFeature> block,
                  std::span<HammingDistance> out) {
    if (out.size() != block.size()) {
        throw Error(ErrorCode::kLengthMismatch, "bulk_hamming output size mismatch");
    }
    // Hoisting the query words lets the compiler keep them in registers.
    const auto q = query.words;
    const std::size_t n = block.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& w = block[i].words;
        HammingDistance d = 0;
        for (std::size_t j = 0; j < kFeatureWords; ++j) {
            d += static_cast<HammingDistance>(std::popcount(q[j] ^ w[j]));
        }
        out[i] = d;
    }
}

std::vector<HammingDistance> bulk_hamming(const BinaryFeature& query,
                                          std::span<const BinaryFeature> block) {
    std::vector<HammingDistance> out(block.size());
    bulk_hamming(query, block, std::span<HammingDistance>(out));
    return out;
}

std::vector<HammingDistance> bulk_hamming(const BinaryFeature& query,
                                          std::span<const std::uint8_t> packed,
                                          std::size_t n) {
    if (packed.size() != n * kFeatureBytes) {
        throw Error(ErrorCode::kLengthMismatch,
                    "packed block holds " + std::to_string(packed.size()) + " bytes, expected " +
                        std::to_string(n * kFeatureBytes));
    }
    std::vector<HammingDistance> out(n);
    BinaryFeature row;
    for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(row.words.data(), packed.data() + i * kFeatureBytes, kFeatureBytes);
        out[i] = hamming(query, row);
    }
    return out;
}

} // namespace tilesearch
