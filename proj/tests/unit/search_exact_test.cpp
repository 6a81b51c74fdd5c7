#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "tilesearch/error.hpp"
#include "tilesearch/random.hpp"
#include "tilesearch/search_exact.hpp"

using namespace tilesearch;

namespace {

// Naive oracle: per-element distance by bit comparison, full stable sort.
std::vector<Neighbor> naive_top_k(std::span<const BinaryFeature> block, const BinaryFeature& q, std::size_t k,
                                  std::optional<std::uint32_t> skip = std::nullopt) {
    std::vector<Neighbor> all;
    for (std::uint32_t i = 0; i < block.size(); ++i) {
        if (skip && *skip == i) continue;
        std::uint32_t d = 0;
        for (std::size_t b = 0; b < kFeatureBits; ++b) d += block[i].bit(b) != q.bit(b);
        all.push_back({i, d});
    }
    std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
    if (all.size() > k) all.resize(k);
    return all;
}

FeatureStore store_of(std::vector<BinaryFeature> vecs) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < vecs.size(); ++i) ids.push_back("t:" + std::to_string(i) + ":0");
    return FeatureStore::from_memory(std::move(ids), std::move(vecs));
}

} // namespace

TEST(TopKSelect, SmallExamples) {
    const std::vector<HammingDistance> d{5, 1, 3};
    const auto r = top_k_select(d, 2);
    EXPECT_EQ(r, (std::vector<Neighbor>{{1, 1}, {2, 3}}));

    const std::vector<HammingDistance> eq(10, 7);
    EXPECT_EQ(top_k_select(eq, 3), (std::vector<Neighbor>{{0, 7}, {1, 7}, {2, 7}}));
    EXPECT_EQ(top_k_select(d, 10).size(), 3u);
    EXPECT_THROW(top_k_select(d, 0), Error);
}

TEST(TopKSelect, MatchesFullSortOnMillion) {
    std::mt19937_64 rng(2);
    std::vector<HammingDistance> d(1'000'000);
    for (auto& x : d) x = static_cast<HammingDistance>(uniform_below(rng, 513));
    std::vector<Neighbor> all;
    for (std::uint32_t i = 0; i < d.size(); ++i) all.push_back({i, d[i]});
    std::sort(all.begin(), all.end(), closer);
    all.resize(30);
    EXPECT_EQ(top_k_select(d, 30), all);
}

TEST(BruteForce, SelfMatch) {
    auto vecs = random_features(100, 1);
    const auto q = vecs[42];
    const auto store = store_of(vecs);
    const auto r = brute_force_search(store, {q, 1});
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].id, "t:42:0");
    EXPECT_EQ(r[0].distance, 0u);
    EXPECT_EQ(r[0].rank, 1u);
}

TEST(BruteForce, ComplementOnly) {
    std::mt19937_64 rng(3);
    const auto q = random_feature(rng);
    const auto store = store_of({q.complement()});
    const auto r = brute_force_search(store, {q, 1});
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].distance, 512u);
}

TEST(BruteForce, EmptyStoreAndBadK) {
    const auto empty = store_of({});
    EXPECT_TRUE(brute_force_search(empty, {BinaryFeature::zeros(), 5}).empty());
    try {
        brute_force_search(empty, {BinaryFeature::zeros(), 0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
    }
}

TEST(BruteForce, KLargerThanCorpus) {
    const auto store = store_of(random_features(7, 4));
    const auto r = brute_force_search(store, {BinaryFeature::zeros(), 30});
    ASSERT_EQ(r.size(), 7u);
    for (std::uint32_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i].rank, i + 1);
}

TEST(BruteForce, MatchesNaiveOracle) {
    const auto vecs = random_features(10000, 5);
    const auto store = store_of(vecs);
    std::mt19937_64 rng(6);
    for (int qi = 0; qi < 100; ++qi) {
        const auto q = random_feature(rng);
        const auto expected = naive_top_k(vecs, q, 30);
        const auto got = brute_force_search(store, {q, 30});
        ASSERT_EQ(got.size(), 30u);
        for (std::size_t i = 0; i < 30; ++i) {
            ASSERT_EQ(got[i].id, store.id(expected[i].row));
            ASSERT_EQ(got[i].distance, expected[i].distance);
            ASSERT_EQ(got[i].rank, i + 1);
        }
    }
}

TEST(BruteForce, TieOrderWithDuplicates) {
    // Many exact duplicates force long tie runs.
    std::mt19937_64 rng(7);
    std::vector<BinaryFeature> base = random_features(20, 8);
    std::vector<BinaryFeature> vecs;
    for (int i = 0; i < 3000; ++i) vecs.push_back(base[uniform_below(rng, base.size())]);
    for (int qi = 0; qi < 20; ++qi) {
        const auto q = base[static_cast<std::size_t>(qi)];
        for (std::size_t block_rows : {1u, 7u, 4096u}) {
            ASSERT_EQ(scan_top_k(vecs, q, 50, std::nullopt, {block_rows, 1}), naive_top_k(vecs, q, 50));
        }
    }
}

TEST(BruteForce, ParallelScanIsBitIdentical) {
    const auto vecs = random_features(50000, 9);
    std::mt19937_64 rng(10);
    for (int qi = 0; qi < 10; ++qi) {
        const auto q = flip_random_bits(vecs[uniform_below(rng, vecs.size())], 100, rng);
        const auto serial = scan_top_k(vecs, q, 100);
        for (unsigned threads : {2u, 3u, 8u}) {
            EXPECT_EQ(scan_top_k(vecs, q, 100, std::nullopt, {1024, threads}), serial);
        }
    }
}

TEST(BruteForce, MonotoneInK) {
    const auto vecs = random_features(3000, 11);
    std::mt19937_64 rng(12);
    const auto q = random_feature(rng);
    auto prev = scan_top_k(vecs, q, 1);
    for (std::size_t k = 2; k <= 60; ++k) {
        const auto cur = scan_top_k(vecs, q, k);
        ASSERT_TRUE(std::equal(prev.begin(), prev.end(), cur.begin()));
        prev = cur;
    }
}

TEST(BruteForce, PermutationInvarianceOfDistinctDistances) {
    std::mt19937_64 rng(13);
    const auto q = random_feature(rng);
    // Distinct distances 0..199 so the result set is unique.
    std::vector<BinaryFeature> vecs;
    for (std::uint32_t d = 0; d < 200; ++d) vecs.push_back(flip_random_bits(q, d, rng));
    const auto store = store_of(vecs);
    std::vector<std::size_t> perm(vecs.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> ids;
    std::vector<BinaryFeature> shuffled;
    for (auto p : perm) {
        ids.push_back(store.id(p));
        shuffled.push_back(vecs[p]);
    }
    const auto permuted = FeatureStore::from_memory(ids, shuffled);
    auto as_set = [](const std::vector<SearchResult>& r) {
        std::map<std::string, HammingDistance> m;
        for (const auto& x : r) m[x.id] = x.distance;
        return m;
    };
    EXPECT_EQ(as_set(brute_force_search(store, {q, 25})), as_set(brute_force_search(permuted, {q, 25})));
}

TEST(BruteForce, ExcludeSelf) {
    auto vecs = random_features(50, 14);
    vecs[10] = vecs[3]; // a legitimate duplicate must survive
    const auto store = store_of(vecs);
    QuerySpec q{vecs[3], 2, true, "t:3:0"};
    const auto r = brute_force_search(store, q);
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r[0].id, "t:10:0");
    EXPECT_EQ(r[0].distance, 0u);
    EXPECT_NE(r[1].id, "t:3:0");

    QuerySpec missing_id{vecs[3], 2, true, std::nullopt};
    EXPECT_THROW(brute_force_search(store, missing_id), Error);
}

TEST(BruteForce, RanksAreContiguousAndDistancesSorted) {
    const auto store = store_of(random_features(2000, 15));
    std::mt19937_64 rng(16);
    const auto r = brute_force_search(store, {random_feature(rng), 100});
    for (std::size_t i = 0; i < r.size(); ++i) {
        EXPECT_EQ(r[i].rank, i + 1);
        if (i) EXPECT_LE(r[i - 1].distance, r[i].distance);
    }
}
