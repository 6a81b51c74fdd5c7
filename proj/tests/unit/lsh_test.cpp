#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <unistd.h>

#include "tilesearch/error.hpp"
#include "tilesearch/lsh.hpp"
#include "tilesearch/random.hpp"

using namespace tilesearch;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("tilesearch_lsh_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::uint32_t key_oracle(const HashFamily& f, const BinaryFeature& v, std::size_t table) {
    std::uint32_t key = 0;
    const auto pos = f.positions(table);
    for (std::size_t j = 0; j < pos.size(); ++j) key |= static_cast<std::uint32_t>(v.bit(pos[j])) << j;
    return key;
}

// Exact binomial-ratio oracle via lgamma.
double collision_oracle(std::uint32_t d, std::uint32_t bits, std::uint32_t width) {
    if (d + bits > width) return 0.0;
    auto lchoose = [](double n, double k) { return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1); };
    return std::exp(lchoose(width - d, bits) - lchoose(width, bits));
}

FeatureStore store_of(std::vector<BinaryFeature> vecs) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < vecs.size(); ++i) ids.push_back("s:" + std::to_string(i) + ":0");
    return FeatureStore::from_memory(std::move(ids), std::move(vecs));
}

} // namespace

TEST(HashFamily, DeterministicForSeed) {
    EXPECT_EQ(make_family(42), make_family(42));
    int differing = 0;
    for (std::uint64_t s = 0; s < 100; ++s) differing += make_family(s).all_positions() != make_family(s + 1000).all_positions();
    EXPECT_EQ(differing, 100);
}

TEST(HashFamily, PositionsAreDistinctInRange) {
    const auto f = make_family(7);
    ASSERT_EQ(f.tables(), 32u);
    ASSERT_EQ(f.bits(), 16u);
    for (std::size_t t = 0; t < f.tables(); ++t) {
        const auto p = f.positions(t);
        std::set<std::uint16_t> s(p.begin(), p.end());
        EXPECT_EQ(s.size(), 16u);
        EXPECT_LT(*s.rbegin(), 512);
        EXPECT_TRUE(std::is_sorted(p.begin(), p.end()));
    }
}

TEST(HashFamily, PositionsRoughlyUniform) {
    // 32 tables x 16 bits over 2000 seeds: each position expected 2000 hits.
    std::vector<int> hits(512, 0);
    for (std::uint64_t s = 0; s < 2000; ++s) {
        const auto f = make_family(s);
        for (auto p : f.all_positions()) ++hits[p];
    }
    const double expected = 2000.0 * 512 / 512;
    for (int h : hits) EXPECT_NEAR(h, expected, 6 * std::sqrt(expected));
}

TEST(HashFamily, InvalidParameters) {
    EXPECT_THROW(HashFamily::make(1, 0, 16), Error);
    EXPECT_THROW(HashFamily::make(1, 32, 0), Error);
    EXPECT_THROW(HashFamily::make(1, 32, kMaxKeyBits + 1), Error);
    EXPECT_THROW(HashFamily::from_positions(1, 1, 2, {5, 5}), Error);
    EXPECT_THROW(HashFamily::from_positions(1, 1, 2, {7, 5}), Error);
    EXPECT_THROW(HashFamily::from_positions(1, 1, 2, {5, 512}), Error);
    EXPECT_THROW(HashFamily::from_positions(1, 1, 2, {5}), Error);
}

TEST(HashFamily, KeyExamples) {
    const auto f = make_family(3);
    for (std::size_t t = 0; t < f.tables(); ++t) {
        EXPECT_EQ(f.hash_key(BinaryFeature::zeros(), t), 0u);
        EXPECT_EQ(f.hash_key(BinaryFeature::ones(), t), 0xFFFFu);
    }
    const auto g = HashFamily::from_positions(0, 1, 4, {0, 63, 64, 511});
    BinaryFeature v = BinaryFeature::zeros();
    v.set_bit(63, true);
    v.set_bit(511, true);
    EXPECT_EQ(g.hash_key(v, 0), 0b1010u);
    try {
        f.hash_key(v, 32);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kBounds);
    }
}

TEST(HashFamily, KeyMatchesPositionLoop) {
    std::mt19937_64 rng(11);
    for (std::uint32_t bits : {1u, 7u, 16u, 20u}) {
        const auto f = make_family(rng(), 8, bits);
        for (int i = 0; i < 500; ++i) {
            const auto v = random_feature(rng);
            for (std::size_t t = 0; t < f.tables(); ++t) ASSERT_EQ(f.hash_key(v, t), key_oracle(f, v, t));
        }
    }
}

TEST(HashFamily, KeySetBitsCountPositionOverlap) {
    // A feature with bits set at S hashes to a key with popcount |S ∩ positions|.
    std::mt19937_64 rng(12);
    const auto f = make_family(5);
    for (int i = 0; i < 200; ++i) {
        BinaryFeature v = BinaryFeature::zeros();
        std::set<std::uint16_t> s;
        for (int j = 0; j < 64; ++j) {
            const auto p = static_cast<std::uint16_t>(uniform_below(rng, 512));
            s.insert(p);
            v.set_bit(p, true);
        }
        for (std::size_t t = 0; t < f.tables(); ++t) {
            int overlap = 0;
            for (auto p : f.positions(t)) overlap += s.count(p) > 0;
            ASSERT_EQ(std::popcount(f.hash_key(v, t)), overlap);
        }
    }
}

TEST(CollisionProbability, ClosedForm) {
    EXPECT_DOUBLE_EQ(collision_probability(0), 1.0);
    EXPECT_DOUBLE_EQ(collision_probability(512), 0.0);
    EXPECT_DOUBLE_EQ(collision_probability(497), 0.0);
    for (std::uint32_t d : {1u, 8u, 32u, 64u, 128u, 256u, 496u})
        EXPECT_NEAR(collision_probability(d), collision_oracle(d, 16, 512), 1e-12 + 1e-9 * collision_oracle(d, 16, 512));
    EXPECT_NEAR(collision_probability(3, 2, 8), 10.0 / 28.0, 1e-15);
    const double p = collision_probability(64);
    EXPECT_NEAR(retrieval_probability(64), 1 - std::pow(1 - p, 32), 1e-12);
}

TEST(CollisionProbability, MonteCarloAgreement) {
    const auto f = make_family(99);
    std::mt19937_64 rng(100);
    const int trials = 20000;
    for (std::uint32_t d : {4u, 16u, 32u, 64u}) {
        int hits = 0;
        for (int i = 0; i < trials; ++i) {
            const auto x = random_feature(rng);
            const auto y = flip_random_bits(x, d, rng);
            const auto t = static_cast<std::size_t>(i % 32);
            hits += f.hash_key(x, t) == f.hash_key(y, t);
        }
        const double p = collision_probability(d);
        const double sigma = std::sqrt(p * (1 - p) / trials);
        EXPECT_NEAR(static_cast<double>(hits) / trials, p, 3 * sigma + 1e-9) << "d=" << d;
    }
}

TEST(LshIndex, EmptyAndSingle) {
    const auto f = make_family(1);
    const auto empty = LshIndex::build({}, f);
    EXPECT_EQ(empty.size(), 0u);
    EXPECT_TRUE(empty.candidates(BinaryFeature::zeros()).empty());
    for (std::size_t t = 0; t < f.tables(); ++t) EXPECT_EQ(empty.nonempty_buckets(t), 0u);

    std::vector<BinaryFeature> one{BinaryFeature::ones()};
    const auto idx = LshIndex::build(one, f);
    EXPECT_EQ(idx.candidates(BinaryFeature::ones()), std::vector<std::uint32_t>{0});
    EXPECT_TRUE(idx.candidates(BinaryFeature::zeros()).empty());
    for (std::size_t t = 0; t < f.tables(); ++t) EXPECT_EQ(idx.nonempty_buckets(t), 1u);
}

TEST(LshIndex, EveryRowOncePerTable) {
    const auto vecs = random_features(10000, 2);
    const auto f = make_family(3);
    const auto idx = LshIndex::build(vecs, f);
    for (std::size_t t = 0; t < f.tables(); ++t) {
        std::vector<int> seen(vecs.size(), 0);
        std::size_t total = 0;
        for (std::uint32_t key = 0; key < (1u << f.bits()); ++key) {
            const auto b = idx.bucket(t, key);
            ASSERT_TRUE(std::is_sorted(b.begin(), b.end()));
            for (auto r : b) {
                ++seen[r];
                ASSERT_EQ(f.hash_key(vecs[r], t), key);
            }
            total += b.size();
        }
        ASSERT_EQ(total, vecs.size());
        ASSERT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    }
}

TEST(LshIndex, CandidatesAreBucketUnion) {
    const auto vecs = random_features(5000, 4);
    const auto f = make_family(5, 32, 8);
    const auto idx = LshIndex::build(vecs, f);
    std::mt19937_64 rng(6);
    for (int q = 0; q < 50; ++q) {
        const auto v = random_feature(rng);
        std::set<std::uint32_t> oracle;
        for (std::uint32_t r = 0; r < vecs.size(); ++r)
            for (std::size_t t = 0; t < f.tables(); ++t)
                if (f.hash_key(vecs[r], t) == f.hash_key(v, t)) {
                    oracle.insert(r);
                    break;
                }
        const auto c = idx.candidates(v);
        ASSERT_EQ(std::vector<std::uint32_t>(oracle.begin(), oracle.end()), c);
    }
}

TEST(LshIndex, SelfIsAlwaysCandidateAndComplementNever) {
    const auto vecs = random_features(2000, 7);
    const auto idx = LshIndex::build(vecs, make_family(8));
    for (std::uint32_t r = 0; r < vecs.size(); ++r) {
        const auto c = idx.candidates(vecs[r]);
        ASSERT_TRUE(std::binary_search(c.begin(), c.end(), r));
    }
    std::vector<BinaryFeature> single{vecs[0]};
    const auto one = LshIndex::build(single, make_family(8));
    EXPECT_TRUE(one.candidates(vecs[0].complement()).empty());
}

TEST(LshIndex, ThreadsProduceIdenticalIndex) {
    const auto vecs = random_features(20000, 9);
    const auto f = make_family(10);
    const auto a = LshIndex::build(vecs, f, {0, 1});
    EXPECT_EQ(a, LshIndex::build(vecs, f, {0, 4}));
    EXPECT_EQ(a, LshIndex::build(vecs, f, {0, 64}));
}

TEST(LshIndex, BucketCapKeepsLowestRows) {
    // 100 identical vectors all land in one bucket per table.
    std::vector<BinaryFeature> vecs(100, BinaryFeature::zeros());
    const auto f = make_family(11);
    const auto idx = LshIndex::build(vecs, f, {10, 1});
    EXPECT_EQ(idx.bucket_cap(), 10u);
    for (std::size_t t = 0; t < f.tables(); ++t) {
        const auto b = idx.bucket(t, 0);
        EXPECT_EQ(std::vector<std::uint32_t>(b.begin(), b.end()),
                  (std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
    }
    EXPECT_EQ(idx.candidates(BinaryFeature::zeros()).size(), 10u);
}

TEST(LshSearch, ReRankingIsExactOnCandidates) {
    const auto vecs = random_features(5000, 12);
    const auto f = make_family(13, 32, 6);
    const auto idx = LshIndex::build(vecs, f);
    std::mt19937_64 rng(14);
    for (int q = 0; q < 50; ++q) {
        const auto v = flip_random_bits(vecs[uniform_below(rng, vecs.size())], 40, rng);
        const auto cand = idx.candidates(v);
        std::vector<Neighbor> oracle;
        for (auto r : cand) oracle.push_back({r, hamming(vecs[r], v)});
        std::sort(oracle.begin(), oracle.end(), closer);
        if (oracle.size() > 20) oracle.resize(20);
        ASSERT_EQ(lsh_top_k(idx, vecs, v, 20), oracle);
    }
}

TEST(LshSearch, EqualsExactWhenCandidatesCoverTopK) {
    const auto vecs = random_features(3000, 15);
    // Short keys make nearly every row a candidate.
    const auto idx = LshIndex::build(vecs, make_family(16, 32, 2));
    std::mt19937_64 rng(17);
    int covered = 0;
    for (int q = 0; q < 30; ++q) {
        const auto v = random_feature(rng);
        const auto exact = scan_top_k(vecs, v, 10);
        const auto cand = idx.candidates(v);
        bool all_in = std::all_of(exact.begin(), exact.end(),
                                  [&](const Neighbor& n) { return std::binary_search(cand.begin(), cand.end(), n.row); });
        if (!all_in) continue;
        ++covered;
        ASSERT_EQ(lsh_top_k(idx, vecs, v, 10), exact);
    }
    EXPECT_GT(covered, 20);
}

TEST(LshSearch, SelfRanksFirstAndExcludeSelf) {
    const auto store = store_of(random_features(4000, 18));
    const auto idx = build_index(store, make_family(19));
    for (std::uint32_t r = 0; r < 100; ++r) {
        const auto res = lsh_search(idx, store, {store.vector(r), 5});
        ASSERT_FALSE(res.empty());
        ASSERT_EQ(res[0].id, store.id(r));
        ASSERT_EQ(res[0].distance, 0u);
        const auto ex = lsh_search(idx, store, {store.vector(r), 5, true, store.id(r)});
        for (const auto& x : ex) ASSERT_NE(x.id, store.id(r));
    }
}

TEST(LshSearch, RecallOfIndexedQueriesIsOne) {
    const auto vecs = random_features(3000, 20);
    const auto idx = LshIndex::build(vecs, make_family(21));
    const std::span<const BinaryFeature> qs(vecs.data(), 200);
    EXPECT_DOUBLE_EQ(measure_recall(idx, vecs, qs, 1), 1.0);
}

TEST(LshIndex, SaveLoadRoundTrip) {
    const auto dir = temp_dir("roundtrip");
    const auto store = store_of(random_features(3000, 22));
    const auto idx = build_index(store, make_family(23), {5, 2});
    idx.save(dir / "x.lsh");
    const auto back = LshIndex::load(dir / "x.lsh");
    EXPECT_EQ(back, idx);
    EXPECT_EQ(back.store_fingerprint(), store.fingerprint());
    EXPECT_EQ(load_index_for(dir / "x.lsh", store), idx);

    const auto other = store_of(random_features(3000, 24));
    try {
        load_index_for(dir / "x.lsh", other);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kCorruptFile);
    }

    const auto empty = LshIndex::build({}, make_family(1, 2, 3));
    empty.save(dir / "e.lsh");
    EXPECT_EQ(LshIndex::load(dir / "e.lsh"), empty);
    fs::remove_all(dir);
}

TEST(LshIndex, CorruptFilesRejected) {
    const auto dir = temp_dir("corrupt");
    const auto vecs = random_features(500, 25);
    LshIndex::build(vecs, make_family(26)).save(dir / "x.lsh");
    std::ifstream in(dir / "x.lsh", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    auto expect_corrupt = [&](std::vector<char> b, const char* what) {
        std::ofstream(dir / "bad.lsh", std::ios::binary).write(b.data(), static_cast<std::streamsize>(b.size()));
        try {
            LshIndex::load(dir / "bad.lsh");
            ADD_FAILURE() << what;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::kCorruptFile) << what;
        }
    };
    auto magic = bytes;
    magic[0] = 'X';
    expect_corrupt(magic, "magic");
    expect_corrupt(std::vector<char>(bytes.begin(), bytes.end() - 4), "truncated");
    auto trailing = bytes;
    trailing.push_back(0);
    expect_corrupt(trailing, "trailing");
    expect_corrupt(std::vector<char>(bytes.begin(), bytes.begin() + 20), "header only");
    EXPECT_THROW(LshIndex::load(dir / "missing.lsh"), Error);
    fs::remove_all(dir);
}
