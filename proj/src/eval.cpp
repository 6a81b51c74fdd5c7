#include "tilesearch/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include "tilesearch/error.hpp"
#include "tilesearch/random.hpp"

namespace tilesearch {

LatencySummary summarize_latencies(std::vector<double> samples_ms) {
    LatencySummary s;
    if (samples_ms.empty()) return s;
    std::sort(samples_ms.begin(), samples_ms.end());
    auto rank = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples_ms.size())));
        return samples_ms[std::clamp<std::size_t>(idx, 1, samples_ms.size()) - 1];
    };
    s.p50_ms = rank(0.50);
    s.p90_ms = rank(0.90);
    s.p99_ms = rank(0.99);
    s.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(samples_ms.size());
    return s;
}

double predicted_recall(std::span<const Neighbor> exact_top_k, std::size_t k, std::uint32_t tables,
                        std::uint32_t bits) {
    if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
    double sum = 0.0;
    for (const auto& n : exact_top_k) sum += retrieval_probability(n.distance, tables, bits);
    return sum / static_cast<double>(k);
}

namespace {
double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}
} // namespace

LshEvalReport run_lsh_eval(const FeatureStore& store, const LshIndex& index, std::size_t query_count,
                           std::size_t k, std::uint64_t seed) {
    if (query_count == 0) throw Error(ErrorCode::kInvalidArgument, "need at least one query");
    if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
    if (store.empty()) throw Error(ErrorCode::kInvalidArgument, "store is empty");
    if (index.size() != store.size()) throw Error(ErrorCode::kLengthMismatch, "index does not match store");

    std::mt19937_64 rng(seed);
    LshEvalReport report;
    report.queries = query_count;
    report.k = k;
    std::vector<double> lsh_ms, exact_ms;
    double recall_sum = 0.0, predicted_sum = 0.0, candidate_sum = 0.0;
    const auto vectors = store.vectors();

    for (std::size_t i = 0; i < query_count; ++i) {
        const auto row = static_cast<std::uint32_t>(uniform_below(rng, store.size()));
        const BinaryFeature& q = vectors[row];

        auto t0 = std::chrono::steady_clock::now();
        const auto exact = scan_top_k(vectors, q, k, row);
        exact_ms.push_back(elapsed_ms(t0));

        t0 = std::chrono::steady_clock::now();
        const auto approx = lsh_top_k(index, vectors, q, k, row);
        lsh_ms.push_back(elapsed_ms(t0));

        candidate_sum += static_cast<double>(index.candidates(q).size());
        std::unordered_set<std::uint32_t> truth;
        for (const auto& n : exact) truth.insert(n.row);
        std::size_t hits = 0;
        for (const auto& n : approx) hits += truth.count(n.row);
        recall_sum += static_cast<double>(hits) / static_cast<double>(k);
        predicted_sum += predicted_recall(exact, k, index.family().tables(), index.family().bits());
    }
    const auto nq = static_cast<double>(query_count);
    report.recall = recall_sum / nq;
    report.predicted_recall = predicted_sum / nq;
    report.mean_candidates = candidate_sum / nq;
    report.lsh = summarize_latencies(std::move(lsh_ms));
    report.exact = summarize_latencies(std::move(exact_ms));
    return report;
}

LabeledCorpus make_labeled_corpus(std::size_t classes, std::size_t per_class, std::uint32_t noise_bits,
                                  std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    LabeledCorpus corpus;
    corpus.vectors.reserve(classes * per_class);
    corpus.labels.reserve(classes * per_class);
    for (std::size_t c = 0; c < classes; ++c) {
        const BinaryFeature prototype = random_feature(rng);
        for (std::size_t i = 0; i < per_class; ++i) {
            corpus.vectors.push_back(flip_random_bits(prototype, noise_bits, rng));
            corpus.labels.push_back(static_cast<std::uint32_t>(c));
        }
    }
    return corpus;
}

double labeled_precision_at_k(const LabeledCorpus& corpus, std::size_t k, const LshIndex* index,
                              std::size_t max_queries) {
    const std::size_t n = corpus.vectors.size();
    if (n == 0 || k == 0) throw Error(ErrorCode::kInvalidArgument, "need a non-empty corpus and k >= 1");
    const std::size_t step = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_queries));
    double sum = 0.0;
    std::size_t queries = 0;
    for (std::size_t row = 0; row < n; row += step) {
        const auto r = static_cast<std::uint32_t>(row);
        const auto found = index ? lsh_top_k(*index, corpus.vectors, corpus.vectors[row], k, r)
                                 : scan_top_k(corpus.vectors, corpus.vectors[row], k, r);
        std::size_t same = 0;
        for (const auto& nb : found) same += corpus.labels[nb.row] == corpus.labels[row];
        sum += static_cast<double>(same) / static_cast<double>(k);
        ++queries;
    }
    return sum / static_cast<double>(queries);
}

} // namespace tilesearch
