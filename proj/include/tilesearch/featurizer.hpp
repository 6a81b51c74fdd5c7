#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "tilesearch/bitvec.hpp"
#include "tilesearch/tiler.hpp"

namespace tilesearch {

/// Real-valued feature as produced by an external network; values are
/// expected to lie near 0 or 1.
struct FloatFeature {
    std::array<float, kFeatureBits> values{};
};

/// Bit i is set iff values[i] >= 0.5. Throws kNonFinite on NaN/inf.
BinaryFeature binarize(const FloatFeature& f);

/// Inverse lift used by tests and tooling: bit -> {0.0, 1.0}.
FloatFeature lift(const BinaryFeature& v);

enum class FeaturizerKind { kRandomHyperplane, kExternalImport };

struct FeaturizerSpec {
    FeaturizerKind kind = FeaturizerKind::kRandomHyperplane;
    std::uint64_t seed = 0;
    std::uint32_t patch_size = 16;
};

/// Sign-of-projection featurizer over area-averaged, standardized pixels.
///
/// The tile is downsampled to patch_size x patch_size x bands by block
/// averaging, flattened, shifted and scaled to zero mean / unit variance
/// (a zero-variance tile becomes the zero vector), and projected onto 512
/// seeded unit-norm Gaussian directions. Bit i is set iff projection i >= 0,
/// so a blank tile maps to the all-ones code.
///
/// Immutable after construction; `featurize` may be called concurrently.
class HyperplaneFeaturizer {
public:
    HyperplaneFeaturizer(const FeaturizerSpec& spec, std::uint32_t tile_size, std::uint32_t bands);

    BinaryFeature featurize(const TilePixels& pixels) const;

    std::uint32_t input_dims() const { return dims_; }
    const FeaturizerSpec& spec() const { return spec_; }

private:
    FeaturizerSpec spec_;
    std::uint32_t tile_size_;
    std::uint32_t bands_;
    std::uint32_t dims_;
    std::vector<double> planes_; // kFeatureBits rows of dims_ values
};

/// One-shot convenience wrapper; builds the hyperplanes on every call.
BinaryFeature featurize(const TilePixels& pixels, const FeaturizerSpec& spec);

/// Reads `path` as consecutive records of 512 little-endian float32 values
/// with no header and pairs them with `ids` in file order.
std::vector<std::pair<TileId, FloatFeature>> import_float_features(const std::filesystem::path& path,
                                                                   std::span<const TileId> ids);

void write_float_features(const std::filesystem::path& path, std::span<const FloatFeature> features);

/// Newline-delimited tile-id list accompanying a float-feature file.
std::vector<TileId> read_id_list(const std::filesystem::path& path);

} // namespace tilesearch
