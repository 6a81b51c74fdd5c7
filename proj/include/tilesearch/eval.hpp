#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tilesearch/bitvec.hpp"
#include "tilesearch/lsh.hpp"
#include "tilesearch/store.hpp"

namespace tilesearch {

struct LatencySummary {
    double p50_ms = 0.0;
    double p90_ms = 0.0;
    double p99_ms = 0.0;
    double mean_ms = 0.0;
};

/// Nearest-rank percentiles of a latency sample (milliseconds).
LatencySummary summarize_latencies(std::vector<double> samples_ms);

struct LshEvalReport {
    std::size_t queries = 0;
    std::size_t k = 0;
    double recall = 0.0;
    /// Mean analytic recall from the exact top-k distances.
    double predicted_recall = 0.0;
    double mean_candidates = 0.0;
    LatencySummary lsh;
    LatencySummary exact;
};

/// Recall@k of LSH against exact search for `query_count` rows drawn from the
/// store by `seed`; each query excludes its own row from both result lists.
LshEvalReport run_lsh_eval(const FeatureStore& store, const LshIndex& index, std::size_t query_count,
                           std::size_t k, std::uint64_t seed);

/// Mean over the exact top-k neighbors of 1 - (1 - p_d)^tables.
double predicted_recall(std::span<const Neighbor> exact_top_k, std::size_t k, std::uint32_t tables = kDefaultTables,
                        std::uint32_t bits = kDefaultKeyBits);

/// Synthetic labeled corpus: `classes` random prototypes, each with
/// `per_class` members at `noise_bits` random bit flips from the prototype.
struct LabeledCorpus {
    std::vector<BinaryFeature> vectors;
    std::vector<std::uint32_t> labels;
};

LabeledCorpus make_labeled_corpus(std::size_t classes, std::size_t per_class, std::uint32_t noise_bits,
                                  std::uint64_t seed);

/// Mean top-k label precision, each member queried against the rest of the
/// corpus (self excluded), using either exact or LSH retrieval.
double labeled_precision_at_k(const LabeledCorpus& corpus, std::size_t k, const LshIndex* index,
                              std::size_t max_queries = 1000);

} // namespace tilesearch
