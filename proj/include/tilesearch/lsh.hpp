#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "tilesearch/bitvec.hpp"
#include "tilesearch/search_exact.hpp"
#include "tilesearch/store.hpp"

namespace tilesearch {

inline constexpr std::uint32_t kDefaultTables = 32;
inline constexpr std::uint32_t kDefaultKeyBits = 16;
inline constexpr std::uint32_t kMaxKeyBits = 20;

/// Bit-sampling hash family: each table samples `bits` distinct positions of
/// the 512-bit feature. Positions are drawn without replacement within a
/// table and independently across tables, then stored in ascending order;
/// key bit j is the feature bit at the table's j-th position.
class HashFamily {
public:
    HashFamily() = default;

    /// Deterministic in all arguments. Throws kInvalidArgument for
    /// tables == 0 or bits outside [1, 20].
    static HashFamily make(std::uint64_t seed, std::uint32_t tables = kDefaultTables,
                           std::uint32_t bits = kDefaultKeyBits);

    /// Rebuilds a family from stored positions (used when loading an index).
    static HashFamily from_positions(std::uint64_t seed, std::uint32_t tables, std::uint32_t bits,
                                     std::vector<std::uint16_t> positions);

    std::uint64_t seed() const { return seed_; }
    std::uint32_t tables() const { return tables_; }
    std::uint32_t bits() const { return bits_; }

    std::span<const std::uint16_t> positions(std::size_t table) const {
        return std::span(positions_).subspan(table * bits_, bits_);
    }
    const std::vector<std::uint16_t>& all_positions() const { return positions_; }

    /// Throws kBounds for table >= tables().
    std::uint32_t hash_key(const BinaryFeature& v, std::size_t table) const;

    /// Same as hash_key without the range check.
    std::uint32_t key_unchecked(const BinaryFeature& v, std::size_t table) const;

    friend bool operator==(const HashFamily& a, const HashFamily& b) {
        return a.seed_ == b.seed_ && a.tables_ == b.tables_ && a.bits_ == b.bits_ &&
               a.positions_ == b.positions_;
    }

private:
    struct WordMask {
        std::uint32_t word;
        std::uint64_t mask;
    };

    void prepare();

    std::uint64_t seed_ = 0;
    std::uint32_t tables_ = 0;
    std::uint32_t bits_ = 0;
    std::vector<std::uint16_t> positions_;
    // Per-table word/mask groups for pext-style extraction.
    std::vector<std::vector<WordMask>> groups_;
};

inline HashFamily make_family(std::uint64_t seed, std::uint32_t tables = kDefaultTables,
                              std::uint32_t bits = kDefaultKeyBits) {
    return HashFamily::make(seed, tables, bits);
}

struct LshBuildOptions {
    /// Per-bucket row cap; 0 disables. When set, each bucket keeps its
    /// lowest-numbered rows.
    std::uint64_t bucket_cap = 0;
    /// Tables hashed concurrently; the index is identical for any value.
    unsigned threads = 1;
};

/// Multi-table bucket index over a packed block. Each table is stored in
/// compressed form: `offsets` (2^bits + 1 entries) into a row array sorted
/// by (key, row). Immutable after construction.
class LshIndex {
public:
    LshIndex() = default;

    static LshIndex build(std::span<const BinaryFeature> vectors, HashFamily family,
                          const LshBuildOptions& options = {});

    const HashFamily& family() const { return family_; }
    std::size_t size() const { return n_; }
    std::uint64_t bucket_cap() const { return bucket_cap_; }
    std::uint64_t store_fingerprint() const { return store_fingerprint_; }
    void set_store_fingerprint(std::uint64_t fp) { store_fingerprint_ = fp; }

    std::span<const std::uint32_t> bucket(std::size_t table, std::uint32_t key) const;
    std::size_t nonempty_buckets(std::size_t table) const;

    /// Union of the query's buckets over all tables, ascending and unique.
    std::vector<std::uint32_t> candidates(const BinaryFeature& v) const;

    /// `<name>.lsh` layout, little-endian:
    ///   "TSLSH001", u64 seed, u32 tables, u32 bits, u64 N, u64 bucket_cap,
    ///   u64 store_fingerprint, tables*bits u16 positions, then per table
    ///   u32 bucket_count followed by (u32 key, u32 size, size * u32 row)
    ///   for each non-empty bucket in ascending key order.
    void save(const std::filesystem::path& path) const;
    static LshIndex load(const std::filesystem::path& path);

    friend bool operator==(const LshIndex&, const LshIndex&) = default;

private:
    struct Table {
        std::vector<std::uint32_t> offsets;
        std::vector<std::uint32_t> rows;
        friend bool operator==(const Table&, const Table&) = default;
    };

    HashFamily family_;
    std::size_t n_ = 0;
    std::uint64_t bucket_cap_ = 0;
    std::uint64_t store_fingerprint_ = 0;
    std::vector<Table> tables_;
};

/// Indexes a sealed store and records its fingerprint.
LshIndex build_index(const FeatureStore& store, const HashFamily& family, const LshBuildOptions& options = {});

/// Loads an index and checks it was built over `store`. Throws kCorruptFile
/// on mismatch.
LshIndex load_index_for(const std::filesystem::path& path, const FeatureStore& store);

/// Exact re-ranking of the candidate set: identical to scan_top_k over the
/// candidate rows, including tie order.
std::vector<Neighbor> lsh_top_k(const LshIndex& index, std::span<const BinaryFeature> vectors,
                                const BinaryFeature& query, std::size_t k,
                                std::optional<std::uint32_t> skip_row = std::nullopt);

std::vector<SearchResult> lsh_search(const LshIndex& index, const FeatureStore& store, const QuerySpec& q);

/// Mean over queries of |LSH top-k ∩ exact top-k| / k.
double measure_recall(const LshIndex& index, std::span<const BinaryFeature> vectors,
                      std::span<const BinaryFeature> queries, std::size_t k);

/// Probability that a pair at Hamming distance d agrees on all `bits`
/// positions sampled without replacement from `width`: C(width-d, bits) / C(width, bits).
double collision_probability(std::uint32_t distance, std::uint32_t bits = kDefaultKeyBits,
                             std::uint32_t width = kFeatureBits);

/// Probability that at least one of `tables` independent tables collides.
double retrieval_probability(std::uint32_t distance, std::uint32_t tables = kDefaultTables,
                             std::uint32_t bits = kDefaultKeyBits, std::uint32_t width = kFeatureBits);

} // namespace tilesearch
