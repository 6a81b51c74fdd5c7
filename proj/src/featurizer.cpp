#include "tilesearch/featurizer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "tilesearch/error.hpp"
#include "tilesearch/image_io.hpp"

namespace tilesearch {

BinaryFeature binarize(const FloatFeature& f) {
    BinaryFeature v;
    for (std::size_t i = 0; i < kFeatureBits; ++i) {
        const float x = f.values[i];
        if (!std::isfinite(x)) {
            throw Error(ErrorCode::kNonFinite, "feature value " + std::to_string(i) + " is not finite");
        }
        if (x >= 0.5f) v.set_bit(i);
    }
    return v;
}

FloatFeature lift(const BinaryFeature& v) {
    FloatFeature f;
    for (std::size_t i = 0; i < kFeatureBits; ++i) {
        f.values[i] = v.bit(i) ? 1.0f : 0.0f;
    }
    return f;
}

namespace {

// Gaussian draws via Box-Muller on mt19937_64 output. std::normal_distribution
// is implementation-defined, which would make codes differ across stdlibs.
class PortableNormal {
public:
    explicit PortableNormal(std::uint64_t seed) : rng_(seed) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = unit();
        } while (u1 <= 0.0);
        const double u2 = unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace

HyperplaneFeaturizer::HyperplaneFeaturizer(const FeaturizerSpec& spec, std::uint32_t tile_size,
                                           std::uint32_t bands)
    : spec_(spec), tile_size_(tile_size), bands_(bands) {
    if (spec.kind != FeaturizerKind::kRandomHyperplane) {
        throw Error(ErrorCode::kInvalidArgument, "featurizer kind must be random-hyperplane");
    }
    if (spec.patch_size == 0 || tile_size == 0 || tile_size % spec.patch_size != 0) {
        throw Error(ErrorCode::kInvalidArgument,
                    "patch size must evenly divide the tile size (" + std::to_string(tile_size) + ")");
    }
    if (bands == 0) throw Error(ErrorCode::kInvalidArgument, "featurizer needs at least one band");

    dims_ = spec.patch_size * spec.patch_size * bands;
    planes_.resize(kFeatureBits * dims_);
    PortableNormal normal(spec.seed);
    for (std::size_t p = 0; p < kFeatureBits; ++p) {
        double* row = planes_.data() + p * dims_;
        double norm2 = 0.0;
        for (std::size_t j = 0; j < dims_; ++j) {
            row[j] = normal.next();
            norm2 += row[j] * row[j];
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t j = 0; j < dims_; ++j) row[j] *= inv;
    }
}

BinaryFeature HyperplaneFeaturizer::featurize(const TilePixels& pixels) const {
    if (pixels.size != tile_size_ || pixels.bands != bands_ ||
        pixels.data.size() != static_cast<std::size_t>(tile_size_) * tile_size_ * bands_) {
        throw Error(ErrorCode::kShape, "tile shape " + std::to_string(pixels.size) + "x" +
                                           std::to_string(pixels.size) + "x" + std::to_string(pixels.bands) +
                                           " does not match featurizer input " + std::to_string(tile_size_) +
                                           "x" + std::to_string(tile_size_) + "x" + std::to_string(bands_));
    }

    const std::uint32_t patch = spec_.patch_size;
    const std::uint32_t cell = tile_size_ / patch;
    std::vector<double> x(dims_, 0.0);
    for (std::uint32_t y = 0; y < tile_size_; ++y) {
        const std::uint32_t py = y / cell;
        for (std::uint32_t c = 0; c < tile_size_; ++c) {
            const std::uint32_t px = c / cell;
            double* dst = x.data() + (static_cast<std::size_t>(py) * patch + px) * bands_;
            for (std::uint32_t b = 0; b < bands_; ++b) dst[b] += pixels.at(c, y, b);
        }
    }
    const double area = static_cast<double>(cell) * cell;
    double mean = 0.0;
    for (auto& v : x) {
        v /= area;
        mean += v;
    }
    mean /= static_cast<double>(dims_);
    double var = 0.0;
    for (auto v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(dims_);

    if (var > 0.0) {
        const double inv_sd = 1.0 / std::sqrt(var);
        for (auto& v : x) v = (v - mean) * inv_sd;
    } else {
        std::fill(x.begin(), x.end(), 0.0);
    }

    BinaryFeature out;
    for (std::size_t p = 0; p < kFeatureBits; ++p) {
        const double* row = planes_.data() + p * dims_;
        double dot = 0.0;
        for (std::size_t j = 0; j < dims_; ++j) dot += row[j] * x[j];
        if (dot >= 0.0) out.set_bit(p);
    }
    return out;
}

BinaryFeature featurize(const TilePixels& pixels, const FeaturizerSpec& spec) {
    return HyperplaneFeaturizer(spec, pixels.size, pixels.bands).featurize(pixels);
}

std::vector<std::pair<TileId, FloatFeature>> import_float_features(const std::filesystem::path& path,
                                                                   std::span<const TileId> ids) {
    const auto bytes = read_file_bytes(path);
    constexpr std::size_t kRecord = kFeatureBits * sizeof(float);
    if (bytes.size() % kRecord != 0 || bytes.size() / kRecord != ids.size()) {
        throw Error(ErrorCode::kLengthMismatch,
                    path.string() + " holds " + std::to_string(bytes.size()) + " bytes; expected " +
                        std::to_string(ids.size()) + " records of " + std::to_string(kRecord) + " bytes");
    }
    std::vector<std::pair<TileId, FloatFeature>> out;
    out.reserve(ids.size());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        FloatFeature f;
        const auto* rec = bytes.data() + r * kRecord;
        for (std::size_t i = 0; i < kFeatureBits; ++i) {
            const auto* p = rec + 4 * i;
            const std::uint32_t u = std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 |
                                    std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
            f.values[i] = std::bit_cast<float>(u);
            if (!std::isfinite(f.values[i])) {
                throw Error(ErrorCode::kNonFinite, path.string() + ": record " + std::to_string(r) +
                                                       " value " + std::to_string(i) + " is not finite");
            }
        }
        out.emplace_back(ids[r], f);
    }
    return out;
}

void write_float_features(const std::filesystem::path& path, std::span<const FloatFeature> features) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(features.size() * kFeatureBits * 4);
    for (const auto& f : features) {
        for (float v : f.values) {
            const auto u = std::bit_cast<std::uint32_t>(v);
            for (int s = 0; s < 32; s += 8) bytes.push_back(static_cast<std::uint8_t>(u >> s));
        }
    }
    write_file_bytes(path, bytes);
}

std::vector<TileId> read_id_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
    std::vector<TileId> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ids.push_back(TileId::parse(line));
    }
    return ids;
}

} // namespace tilesearch
