#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tilesearch/bitvec.hpp"
#include "tilesearch/tiler.hpp"

namespace tilesearch {

/// On-disk layout of a store named `base`:
///   base.feat  N x 64 raw feature bytes, row order = insertion order
///   base.ids   N newline-terminated tile-id strings, same order
///   base.meta  text: format tag, version, count, width in bits
struct StorePaths {
    std::filesystem::path feat;
    std::filesystem::path ids;
    std::filesystem::path meta;
    std::filesystem::path lsh;
    std::filesystem::path scenes;
    std::filesystem::path thumbs;
    std::filesystem::path checkpoint;

    static StorePaths for_base(const std::filesystem::path& base);
};

class MappedFile;

/// Sealed, immutable feature store. Const member functions are safe to call
/// from any number of threads.
class FeatureStore {
public:
    FeatureStore();
    FeatureStore(FeatureStore&&) noexcept;
    FeatureStore& operator=(FeatureStore&&) noexcept;
    ~FeatureStore();

    /// Maps `base.feat` and loads the id index; validates all size invariants.
    static FeatureStore open(const std::filesystem::path& base);

    /// In-memory store, not backed by files. Ids must be unique.
    static FeatureStore from_memory(std::vector<std::string> ids, std::vector<BinaryFeature> vectors);

    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }

    std::span<const BinaryFeature> vectors() const { return vectors_; }
    const BinaryFeature& vector(std::size_t row) const { return vectors_[row]; }
    const std::string& id(std::size_t row) const { return ids_[row]; }
    const std::vector<std::string>& ids() const { return ids_; }

    std::optional<std::uint32_t> find(std::string_view id) const;
    /// Throws kNotFound.
    std::uint32_t row_of(std::string_view id) const;
    const BinaryFeature& get(std::string_view id) const { return vectors_[row_of(id)]; }
    const BinaryFeature& get(const TileId& id) const { return get(id.to_string()); }

    /// Order-sensitive 64-bit digest of all rows, used to tie an index file
    /// to the store it was built from.
    std::uint64_t fingerprint() const;

    const std::filesystem::path& base() const { return base_; }

private:
    friend class FeatureStoreBuilder;
    void index_ids();

    std::filesystem::path base_;
    std::unique_ptr<MappedFile> mapping_;
    std::vector<BinaryFeature> owned_;
    std::span<const BinaryFeature> vectors_;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::uint32_t> rows_;
};

/// Single-writer build phase of a store. Not thread-safe.
class FeatureStoreBuilder {
public:
    /// Throws kDuplicateId or kSealed.
    void put(const TileId& id, const BinaryFeature& v) { put(id.to_string(), v); }
    void put(std::string id, const BinaryFeature& v);

    /// Throws kNotFound.
    const BinaryFeature& get(const TileId& id) const { return get(id.to_string()); }
    const BinaryFeature& get(std::string_view id) const;

    std::size_t size() const { return ids_.size(); }
    bool sealed() const { return sealed_; }

    /// Writes base.feat / base.ids / base.meta and freezes the builder.
    /// Returns the sealed store (owning the builder's data).
    FeatureStore seal(const std::filesystem::path& base);

private:
    std::vector<std::string> ids_;
    std::vector<BinaryFeature> vectors_;
    std::unordered_map<std::string, std::uint32_t> rows_;
    bool sealed_ = false;
};

/// Writes `data` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data);

} // namespace tilesearch
