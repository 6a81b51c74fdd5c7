#include "tilesearch/search_exact.hpp"

#include <algorithm>
#include <thread>

#include "tilesearch/error.hpp"

namespace tilesearch {

namespace {
// Max-heap comparator: the farthest neighbor sits at the front.
bool heap_less(const Neighbor& a, const Neighbor& b) { return closer(a, b); }
} // namespace

TopK::TopK(std::size_t k) : k_(k) {
    if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
    heap_.reserve(std::min<std::size_t>(k, 1 << 16));
}

void TopK::push(Neighbor n) {
    heap_.push_back(n);
    std::push_heap(heap_.begin(), heap_.end(), heap_less);
}

void TopK::replace_top(Neighbor n) {
    std::pop_heap(heap_.begin(), heap_.end(), heap_less);
    heap_.back() = n;
    std::push_heap(heap_.begin(), heap_.end(), heap_less);
}

std::vector<Neighbor> TopK::take_sorted() {
    std::sort_heap(heap_.begin(), heap_.end(), heap_less);
    return std::exchange(heap_, {});
}

std::vector<Neighbor> top_k_select(std::span<const HammingDistance> distances, std::size_t k) {
    TopK top(k);
    for (std::size_t i = 0; i < distances.size(); ++i) {
        top.offer(static_cast<std::uint32_t>(i), distances[i]);
    }
    return top.take_sorted();
}

namespace {

void scan_range(std::span<const BinaryFeature> block, std::size_t begin, std::size_t end,
                const BinaryFeature& query, std::optional<std::uint32_t> skip_row, std::size_t block_rows,
                TopK& top) {
    std::vector<HammingDistance> dist(std::min(block_rows, end - begin));
    for (std::size_t start = begin; start < end; start += block_rows) {
        const std::size_t n = std::min(block_rows, end - start);
        bulk_hamming(query, block.subspan(start, n), std::span(dist.data(), n));
        const HammingDistance bound = top.bound(); // refreshed per block; offer() rechecks
        for (std::size_t i = 0; i < n; ++i) {
            // Rows arrive in ascending order, so once the heap is full only a
            // strictly smaller distance can displace its worst entry.
            if (dist[i] < bound) {
                const auto row = static_cast<std::uint32_t>(start + i);
                if (skip_row && *skip_row == row) continue;
                top.offer(row, dist[i]);
            }
        }
    }
}

} // namespace

std::vector<Neighbor> scan_top_k(std::span<const BinaryFeature> block, const BinaryFeature& query,
                                 std::size_t k, std::optional<std::uint32_t> skip_row,
                                 const ScanOptions& options) {
    if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
    const std::size_t block_rows = std::max<std::size_t>(options.block_rows, 1);
    const std::size_t n = block.size();
    const unsigned threads = std::max(1u, options.threads);

    if (threads == 1 || n < 2 * block_rows) {
        TopK top(k);
        scan_range(block, 0, n, query, skip_row, block_rows, top);
        return top.take_sorted();
    }

    const std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::vector<Neighbor>> partial(threads);
    {
        std::vector<std::jthread> workers;
        for (unsigned t = 0; t < threads; ++t) {
            const std::size_t begin = std::min(n, t * chunk);
            const std::size_t end = std::min(n, begin + chunk);
            workers.emplace_back([&, t, begin, end] {
                TopK top(k);
                scan_range(block, begin, end, query, skip_row, block_rows, top);
                partial[t] = top.take_sorted();
            });
        }
    }
    std::vector<Neighbor> merged;
    for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
    std::sort(merged.begin(), merged.end(), closer);
    if (merged.size() > k) merged.resize(k);
    return merged;
}

std::optional<std::uint32_t> self_row(const FeatureStore& store, const QuerySpec& q) {
    if (!q.exclude_self) return std::nullopt;
    if (!q.self_id) {
        throw Error(ErrorCode::kInvalidArgument, "exclude_self requires the query's own tile id");
    }
    return store.find(*q.self_id);
}

std::vector<SearchResult> to_results(const FeatureStore& store, std::span<const Neighbor> neighbors) {
    std::vector<SearchResult> out;
    out.reserve(neighbors.size());
    std::uint32_t rank = 1;
    for (const auto& n : neighbors) {
        out.push_back({store.id(n.row), n.distance, rank++});
    }
    return out;
}

std::vector<SearchResult> brute_force_search(const FeatureStore& store, const QuerySpec& q,
                                             const ScanOptions& options) {
    if (q.k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
    if (store.empty()) return {};
    const auto skip = self_row(store, q);
    const auto neighbors = scan_top_k(store.vectors(), q.query, q.k, skip, options);
    return to_results(store, neighbors);
}

} // namespace tilesearch
