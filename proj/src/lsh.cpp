#include "tilesearch/lsh.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <thread>
#include <unordered_set>

#if defined(__BMI2__)
#include <immintrin.h>
#endif

#include "tilesearch/error.hpp"
#include "tilesearch/random.hpp"

namespace tilesearch {

namespace fs = std::filesystem;

// ---- HashFamily ---------------------------------------------------------

HashFamily HashFamily::make(std::uint64_t seed, std::uint32_t tables, std::uint32_t bits) {
    if (tables == 0) throw Error(ErrorCode::kInvalidArgument, "hash family needs at least one table");
    if (bits == 0 || bits > kMaxKeyBits) {
        throw Error(ErrorCode::kInvalidArgument, "key width must be in [1, 20] bits");
    }
    std::mt19937_64 rng(seed);
    std::vector<std::uint16_t> pool(kFeatureBits);
    std::vector<std::uint16_t> positions;
    positions.reserve(static_cast<std::size_t>(tables) * bits);
    for (std::uint32_t t = 0; t < tables; ++t) {
        for (std::size_t i = 0; i < kFeatureBits; ++i) pool[i] = static_cast<std::uint16_t>(i);
        // Partial Fisher-Yates: the first `bits` slots become a uniform sample.
        for (std::uint32_t i = 0; i < bits; ++i) {
            const auto j = i + uniform_below(rng, kFeatureBits - i);
            std::swap(pool[i], pool[j]);
        }
        std::sort(pool.begin(), pool.begin() + bits);
        positions.insert(positions.end(), pool.begin(), pool.begin() + bits);
    }
    return from_positions(seed, tables, bits, std::move(positions));
}

HashFamily HashFamily::from_positions(std::uint64_t seed, std::uint32_t tables, std::uint32_t bits,
                                      std::vector<std::uint16_t> positions) {
    if (tables == 0 || bits == 0 || bits > kMaxKeyBits ||
        positions.size() != static_cast<std::size_t>(tables) * bits) {
        throw Error(ErrorCode::kInvalidArgument, "inconsistent hash family shape");
    }
    HashFamily f;
    f.seed_ = seed;
    f.tables_ = tables;
    f.bits_ = bits;
    f.positions_ = std::move(positions);
    for (std::uint32_t t = 0; t < tables; ++t) {
        auto p = f.positions(t);
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (p[j] >= kFeatureBits || (j > 0 && p[j] <= p[j - 1])) {
                throw Error(ErrorCode::kInvalidArgument,
                            "table " + std::to_string(t) + " positions must be ascending, distinct and < 512");
            }
        }
    }
    f.prepare();
    return f;
}

void HashFamily::prepare() {
    groups_.assign(tables_, {});
    for (std::uint32_t t = 0; t < tables_; ++t) {
        for (auto p : positions(t)) {
            const std::uint32_t word = p >> 6;
            if (groups_[t].empty() || groups_[t].back().word != word) {
                groups_[t].push_back({word, 0});
            }
            groups_[t].back().mask |= std::uint64_t{1} << (p & 63);
        }
    }
}

std::uint32_t HashFamily::key_unchecked(const BinaryFeature& v, std::size_t table) const {
    std::uint32_t key = 0;
    unsigned shift = 0;
    for (const auto& g : groups_[table]) {
#if defined(__BMI2__)
        key |= static_cast<std::uint32_t>(_pext_u64(v.words[g.word], g.mask)) << shift;
        shift += static_cast<unsigned>(std::popcount(g.mask));
#else
        std::uint64_t m = g.mask;
        const std::uint64_t w = v.words[g.word];
        while (m) {
            const int b = std::countr_zero(m);
            key |= static_cast<std::uint32_t>((w >> b) & 1u) << shift++;
            m &= m - 1;
        }
#endif
    }
    return key;
}

std::uint32_t HashFamily::hash_key(const BinaryFeature& v, std::size_t table) const {
    if (table >= tables_) {
        throw Error(ErrorCode::kBounds, "table " + std::to_string(table) + " out of range [0, " +
                                            std::to_string(tables_) + ")");
    }
    return key_unchecked(v, table);
}

// ---- LshIndex -----------------------------------------------------------

LshIndex LshIndex::build(std::span<const BinaryFeature> vectors, HashFamily family,
                         const LshBuildOptions& options) {
    if (vectors.size() > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(ErrorCode::kInvalidArgument, "index supports at most 2^32-1 rows");
    }
    LshIndex index;
    index.n_ = vectors.size();
    index.bucket_cap_ = options.bucket_cap;
    index.family_ = std::move(family);
    const std::uint32_t tables = index.family_.tables();
    const std::size_t buckets = std::size_t{1} << index.family_.bits();
    index.tables_.resize(tables);

    auto build_table = [&](std::uint32_t t, std::vector<std::uint32_t>& keys) {
        Table& table = index.tables_[t];
        const std::size_t n = vectors.size();
        keys.resize(n);
        table.offsets.assign(buckets + 1, 0);
        for (std::size_t i = 0; i < n; ++i) {
            keys[i] = index.family_.key_unchecked(vectors[i], t);
            ++table.offsets[keys[i] + 1];
        }
        if (options.bucket_cap > 0) {
            for (std::size_t b = 1; b <= buckets; ++b) {
                table.offsets[b] = static_cast<std::uint32_t>(
                    std::min<std::uint64_t>(table.offsets[b], options.bucket_cap));
            }
        }
        for (std::size_t b = 0; b < buckets; ++b) table.offsets[b + 1] += table.offsets[b];
        table.rows.resize(table.offsets[buckets]);
        std::vector<std::uint32_t> cursor(table.offsets.begin(), table.offsets.end() - 1);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t k = keys[i];
            if (cursor[k] < table.offsets[k + 1]) {
                table.rows[cursor[k]++] = static_cast<std::uint32_t>(i);
            }
        }
    };

    const unsigned threads = std::clamp(options.threads, 1u, tables);
    if (threads == 1) {
        std::vector<std::uint32_t> keys;
        for (std::uint32_t t = 0; t < tables; ++t) build_table(t, keys);
    } else {
        std::atomic<std::uint32_t> next{0};
        std::vector<std::jthread> workers;
        for (unsigned w = 0; w < threads; ++w) {
            workers.emplace_back([&] {
                std::vector<std::uint32_t> keys;
                for (std::uint32_t t = next++; t < tables; t = next++) build_table(t, keys);
            });
        }
    }
    return index;
}

std::span<const std::uint32_t> LshIndex::bucket(std::size_t table, std::uint32_t key) const {
    if (table >= tables_.size()) throw Error(ErrorCode::kBounds, "table index out of range");
    const Table& t = tables_[table];
    if (static_cast<std::size_t>(key) + 1 >= t.offsets.size()) throw Error(ErrorCode::kBounds, "bucket key out of range");
    return std::span(t.rows).subspan(t.offsets[key], t.offsets[key + 1] - t.offsets[key]);
}

std::size_t LshIndex::nonempty_buckets(std::size_t table) const {
    const Table& t = tables_.at(table);
    std::size_t count = 0;
    for (std::size_t b = 0; b + 1 < t.offsets.size(); ++b) count += t.offsets[b + 1] != t.offsets[b];
    return count;
}

std::vector<std::uint32_t> LshIndex::candidates(const BinaryFeature& v) const {
    std::vector<std::uint32_t> out;
    if (n_ == 0) return out;
    for (std::uint32_t t = 0; t < tables_.size(); ++t) {
        const Table& table = tables_[t];
        const std::uint32_t key = family_.key_unchecked(v, t);
        out.insert(out.end(), table.rows.begin() + table.offsets[key], table.rows.begin() + table.offsets[key + 1]);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---- persistence --------------------------------------------------------

namespace {

constexpr char kLshMagic[8] = {'T', 'S', 'L', 'S', 'H', '0', '0', '1'};

class LeWriter {
public:
    explicit LeWriter(std::ofstream& out) : out_(out) {}
    template <typename T>
    void put(T v) {
        unsigned char buf[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        out_.write(reinterpret_cast<const char*>(buf), sizeof(T));
    }

private:
    std::ofstream& out_;
};

class LeReader {
public:
    LeReader(std::ifstream& in, const fs::path& path) : in_(in), path_(path) {}
    template <typename T>
    T get() {
        unsigned char buf[sizeof(T)];
        if (!in_.read(reinterpret_cast<char*>(buf), sizeof(T))) {
            throw Error(ErrorCode::kCorruptFile, path_.string() + ": truncated index file");
        }
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T{buf[i]} << (8 * i));
        return v;
    }

private:
    std::ifstream& in_;
    const fs::path& path_;
};

} // namespace

void LshIndex::save(const fs::path& path) const {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::kIo, "cannot create " + tmp.string());
        LeWriter w(out);
        out.write(kLshMagic, sizeof(kLshMagic));
        w.put<std::uint64_t>(family_.seed());
        w.put<std::uint32_t>(family_.tables());
        w.put<std::uint32_t>(family_.bits());
        w.put<std::uint64_t>(n_);
        w.put<std::uint64_t>(bucket_cap_);
        w.put<std::uint64_t>(store_fingerprint_);
        for (auto p : family_.all_positions()) w.put<std::uint16_t>(p);
        for (std::size_t t = 0; t < tables_.size(); ++t) {
            const Table& table = tables_[t];
            w.put<std::uint32_t>(static_cast<std::uint32_t>(nonempty_buckets(t)));
            for (std::uint32_t key = 0; key + 1 < table.offsets.size(); ++key) {
                const std::uint32_t size = table.offsets[key + 1] - table.offsets[key];
                if (size == 0) continue;
                w.put<std::uint32_t>(key);
                w.put<std::uint32_t>(size);
                for (std::uint32_t i = table.offsets[key]; i < table.offsets[key + 1]; ++i) {
                    w.put<std::uint32_t>(table.rows[i]);
                }
            }
        }
        out.flush();
        if (!out) throw Error(ErrorCode::kIo, "write failed on " + tmp.string());
    }
    fs::rename(tmp, path);
}

LshIndex LshIndex::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
    char magic[sizeof(kLshMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kLshMagic, sizeof(magic)) != 0) {
        throw Error(ErrorCode::kCorruptFile, path.string() + ": not an LSH index file");
    }
    LeReader r(in, path);
    const auto seed = r.get<std::uint64_t>();
    const auto tables = r.get<std::uint32_t>();
    const auto bits = r.get<std::uint32_t>();
    const auto n = r.get<std::uint64_t>();
    const auto cap = r.get<std::uint64_t>();
    const auto fingerprint = r.get<std::uint64_t>();
    if (tables == 0 || tables > 4096 || bits == 0 || bits > kMaxKeyBits ||
        n > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(ErrorCode::kCorruptFile, path.string() + ": implausible index header");
    }
    std::vector<std::uint16_t> positions(static_cast<std::size_t>(tables) * bits);
    for (auto& p : positions) p = r.get<std::uint16_t>();

    LshIndex index;
    try {
        index.family_ = HashFamily::from_positions(seed, tables, bits, std::move(positions));
    } catch (const Error& e) {
        throw Error(ErrorCode::kCorruptFile, path.string() + ": " + e.what());
    }
    index.n_ = static_cast<std::size_t>(n);
    index.bucket_cap_ = cap;
    index.store_fingerprint_ = fingerprint;
    index.tables_.resize(tables);
    const std::size_t buckets = std::size_t{1} << bits;

    for (std::uint32_t t = 0; t < tables; ++t) {
        Table& table = index.tables_[t];
        table.offsets.assign(buckets + 1, 0);
        const auto count = r.get<std::uint32_t>();
        if (count > buckets) throw Error(ErrorCode::kCorruptFile, path.string() + ": bucket count overflow");
        std::int64_t prev_key = -1;
        for (std::uint32_t b = 0; b < count; ++b) {
            const auto key = r.get<std::uint32_t>();
            const auto size = r.get<std::uint32_t>();
            if (key >= buckets || static_cast<std::int64_t>(key) <= prev_key || size == 0 ||
                table.rows.size() + size > n || (cap > 0 && size > cap)) {
                throw Error(ErrorCode::kCorruptFile, path.string() + ": malformed bucket in table " +
                                                         std::to_string(t));
            }
            prev_key = key;
            table.offsets[key + 1] = size;
            std::int64_t prev_row = -1;
            for (std::uint32_t i = 0; i < size; ++i) {
                const auto row = r.get<std::uint32_t>();
                if (row >= n || static_cast<std::int64_t>(row) <= prev_row) {
                    throw Error(ErrorCode::kCorruptFile, path.string() + ": bad row in table " + std::to_string(t));
                }
                prev_row = row;
                table.rows.push_back(row);
            }
        }
        for (std::size_t b = 0; b < buckets; ++b) table.offsets[b + 1] += table.offsets[b];
        if (cap == 0 && table.rows.size() != n) {
            throw Error(ErrorCode::kCorruptFile, path.string() + ": table " + std::to_string(t) +
                                                     " does not cover every row");
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw Error(ErrorCode::kCorruptFile, path.string() + ": trailing bytes after index");
    }
    return index;
}

LshIndex build_index(const FeatureStore& store, const HashFamily& family, const LshBuildOptions& options) {
    LshIndex index = LshIndex::build(store.vectors(), family, options);
    index.set_store_fingerprint(store.fingerprint());
    return index;
}

LshIndex load_index_for(const fs::path& path, const FeatureStore& store) {
    LshIndex index = LshIndex::load(path);
    if (index.size() != store.size() || index.store_fingerprint() != store.fingerprint()) {
        throw Error(ErrorCode::kCorruptFile, path.string() + ": index was built over a different store");
    }
    return index;
}

// ---- search -------------------------------------------------------------

std::vector<Neighbor> lsh_top_k(const LshIndex& index, std::span<const BinaryFeature> vectors,
                                const BinaryFeature& query, std::size_t k, std::optional<std::uint32_t> skip_row) {
    if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
    if (index.size() != vectors.size()) {
        throw Error(ErrorCode::kLengthMismatch, "index and vector block sizes differ");
    }
    TopK top(k);
    for (const std::uint32_t row : index.candidates(query)) {
        if (skip_row && *skip_row == row) continue;
        top.offer(row, hamming(query, vectors[row]));
    }
    return top.take_sorted();
}

std::vector<SearchResult> lsh_search(const LshIndex& index, const FeatureStore& store, const QuerySpec& q) {
    if (q.k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
    const auto skip = self_row(store, q);
    const auto neighbors = lsh_top_k(index, store.vectors(), q.query, q.k, skip);
    return to_results(store, neighbors);
}

double measure_recall(const LshIndex& index, std::span<const BinaryFeature> vectors,
                      std::span<const BinaryFeature> queries, std::size_t k) {
    if (queries.empty()) throw Error(ErrorCode::kInvalidArgument, "recall needs at least one query");
    if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
    double total = 0.0;
    for (const auto& q : queries) {
        const auto exact = scan_top_k(vectors, q, k);
        const auto approx = lsh_top_k(index, vectors, q, k);
        std::unordered_set<std::uint32_t> truth;
        for (const auto& n : exact) truth.insert(n.row);
        std::size_t hits = 0;
        for (const auto& n : approx) hits += truth.count(n.row);
        total += static_cast<double>(hits) / static_cast<double>(k);
    }
    return total / static_cast<double>(queries.size());
}

double collision_probability(std::uint32_t distance, std::uint32_t bits, std::uint32_t width) {
    if (distance > width || bits > width) return 0.0;
    if (bits > width - distance) return 0.0;
    double p = 1.0;
    for (std::uint32_t i = 0; i < bits; ++i) {
        p *= static_cast<double>(width - distance - i) / static_cast<double>(width - i);
    }
    return p;
}

double retrieval_probability(std::uint32_t distance, std::uint32_t tables, std::uint32_t bits, std::uint32_t width) {
    const double p = collision_probability(distance, bits, width);
    return 1.0 - std::pow(1.0 - p, static_cast<double>(tables));
}

} // namespace tilesearch
