#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tilesearch/bitvec.hpp"
#include "tilesearch/store.hpp"

namespace tilesearch {

/// A row of a packed block together with its distance to a query.
/// Ordering is (distance, row): ties resolve to the lower row index.
struct Neighbor {
    std::uint32_t row = 0;
    HammingDistance distance = 0;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

inline bool closer(const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.row < b.row;
}

struct SearchResult {
    std::string id;
    HammingDistance distance = 0;
    std::uint32_t rank = 0;

    friend bool operator==(const SearchResult&, const SearchResult&) = default;
};

struct QuerySpec {
    BinaryFeature query;
    std::uint32_t k = 1;
    bool exclude_self = false;
    /// The query's own tile id; required when exclude_self is set.
    std::optional<std::string> self_id;
};

/// Bounded max-heap keeping the k closest neighbors seen so far.
/// Memory is O(k) regardless of how many candidates are offered.
class TopK {
public:
    explicit TopK(std::size_t k);

    void offer(std::uint32_t row, HammingDistance distance) {
        if (heap_.size() < k_) {
            push({row, distance});
        } else if (closer({row, distance}, heap_.front())) {
            replace_top({row, distance});
        }
    }

    /// Admission threshold: a candidate must be strictly below this distance
    /// to enter once the heap is full (equal distances with larger rows lose).
    /// Returns UINT32_MAX while the heap is still filling.
    HammingDistance bound() const {
        return heap_.size() < k_ ? ~HammingDistance{0} : heap_.front().distance;
    }

    /// Contents sorted ascending by (distance, row). Leaves the heap empty.
    std::vector<Neighbor> take_sorted();

    std::size_t capacity() const { return k_; }

private:
    void push(Neighbor n);
    void replace_top(Neighbor n);

    std::size_t k_;
    std::vector<Neighbor> heap_;
};

/// k smallest (row, distance) pairs of `distances`, ascending with the
/// row-index tie rule. Throws kInvalidArgument for k == 0.
std::vector<Neighbor> top_k_select(std::span<const HammingDistance> distances, std::size_t k);

struct ScanOptions {
    /// Rows scored per bulk_hamming call before heap selection.
    std::size_t block_rows = 4096;
    /// Worker threads for one scan; results are identical for any value.
    unsigned threads = 1;
};

/// Exact k-NN over a packed block by full linear scan. `skip_row`, when set,
/// is never returned.
std::vector<Neighbor> scan_top_k(std::span<const BinaryFeature> block, const BinaryFeature& query,
                                 std::size_t k, std::optional<std::uint32_t> skip_row = std::nullopt,
                                 const ScanOptions& options = {});

/// Resolves the row to drop for an exclude_self query, if any.
std::optional<std::uint32_t> self_row(const FeatureStore& store, const QuerySpec& q);

std::vector<SearchResult> to_results(const FeatureStore& store, std::span<const Neighbor> neighbors);

/// Exact search over a sealed store: min(k, N) results, ranks 1..k.
std::vector<SearchResult> brute_force_search(const FeatureStore& store, const QuerySpec& q,
                                             const ScanOptions& options = {});

} // namespace tilesearch
