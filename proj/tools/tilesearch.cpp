// Command-line front end: corpus ingest, exact/LSH queries, evaluation and
// the HTTP query service.

#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "tilesearch/error.hpp"
#include "tilesearch/eval.hpp"
#include "tilesearch/featurizer.hpp"
#include "tilesearch/ingest.hpp"
#include "tilesearch/lsh.hpp"
#include "tilesearch/search_exact.hpp"
#include "tilesearch/service.hpp"
#include "tilesearch/store.hpp"

namespace fs = std::filesystem;
using namespace tilesearch;

namespace {

QueryService* g_service = nullptr;

void on_signal(int) {
    if (g_service) g_service->stop();
}

void print_results(const std::vector<SearchResult>& results) {
    for (const auto& r : results) {
        std::printf("%u\t%s\t%u\n", r.rank, r.id.c_str(), r.distance);
    }
}

void print_latency(const char* label, const LatencySummary& s) {
    std::printf("%s_latency_ms\tp50=%.3f\tp90=%.3f\tp99=%.3f\tmean=%.3f\n", label, s.p50_ms, s.p90_ms, s.p99_ms,
                s.mean_ms);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tile visual search: binary features, exact and LSH k-NN"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Tile scenes, featurize, seal a store and build its LSH index");
    fs::path scenes_dir, ingest_store, ingest_config;
    std::uint64_t ingest_seed = 0;
    unsigned parallelism = 1;
    bool no_thumbs = false;
    ingest->add_option("--scenes", scenes_dir, "Directory of .png/.ppm/.raw scenes");
    ingest->add_option("--store", ingest_store, "Output store name (path prefix)");
    ingest->add_option("--seed", ingest_seed, "Featurizer and LSH seed");
    ingest->add_option("--parallelism", parallelism, "Worker threads")->check(CLI::PositiveNumber);
    ingest->add_option("--config", ingest_config, "JSON job file (command-line flags override it)");
    ingest->add_flag("--no-thumbnails", no_thumbs, "Skip rendering tile thumbnails");

    // search-exact / search-lsh
    fs::path query_store;
    std::string query_id;
    std::uint32_t query_k = 10;
    bool exclude_self = false;
    auto add_query_opts = [&](CLI::App* sub) {
        sub->add_option("--store", query_store, "Store name")->required();
        sub->add_option("--query-id", query_id, "Tile id of the query")->required();
        sub->add_option("--k", query_k, "Number of neighbors")->check(CLI::PositiveNumber);
        sub->add_flag("--exclude-self", exclude_self, "Drop the query tile from its own results");
    };
    auto* exact = app.add_subcommand("search-exact", "Exact brute-force k-NN");
    add_query_opts(exact);
    auto* lsh = app.add_subcommand("search-lsh", "Approximate k-NN through the LSH index");
    add_query_opts(lsh);

    // lsh-eval
    auto* eval = app.add_subcommand("lsh-eval", "Recall@k and latency of LSH against exact search");
    fs::path eval_store;
    std::size_t eval_queries = 100, eval_k = 30;
    std::uint64_t eval_seed = 0;
    eval->add_option("--store", eval_store, "Store name")->required();
    eval->add_option("--queries", eval_queries, "Number of sampled queries")->check(CLI::PositiveNumber);
    eval->add_option("--k", eval_k, "Neighbors per query")->check(CLI::PositiveNumber);
    eval->add_option("--seed", eval_seed, "Query sampling seed");

    // precision-eval
    auto* prec = app.add_subcommand("precision-eval", "Top-k label precision on a synthetic labeled corpus");
    std::size_t classes = 100, per_class = 100, prec_k = 30;
    std::uint32_t noise_bits = 64;
    std::uint64_t prec_seed = 0;
    prec->add_option("--classes", classes)->check(CLI::PositiveNumber);
    prec->add_option("--per-class", per_class)->check(CLI::PositiveNumber);
    prec->add_option("--noise-bits", noise_bits);
    prec->add_option("--k", prec_k)->check(CLI::PositiveNumber);
    prec->add_option("--seed", prec_seed);

    // build-index
    auto* build = app.add_subcommand("build-index", "(Re)build <store>.lsh for an existing store");
    fs::path build_store;
    LshParams build_params;
    build->add_option("--store", build_store, "Store name")->required();
    build->add_option("--seed", build_params.seed);
    build->add_option("--tables", build_params.tables)->check(CLI::PositiveNumber);
    build->add_option("--bits", build_params.bits)->check(CLI::Range(1u, kMaxKeyBits));
    build->add_option("--bucket-cap", build_params.bucket_cap, "Max rows per bucket, 0 = unbounded");

    // import-features
    auto* import = app.add_subcommand("import-features", "Binarize external float features into a new store");
    fs::path import_features, import_ids, import_store;
    std::uint64_t import_seed = 0;
    import->add_option("--features", import_features, "Raw little-endian float32 file, 512 per record")->required();
    import->add_option("--ids", import_ids, "Newline-delimited tile ids, one per record")->required();
    import->add_option("--store", import_store, "Output store name")->required();
    import->add_option("--seed", import_seed, "LSH seed");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP query service");
    fs::path serve_config, serve_store;
    int serve_port = -1;
    serve->add_option("--config", serve_config, "JSON service config");
    serve->add_option("--store", serve_store, "Store name (overrides config)");
    serve->add_option("--port", serve_port, "Listen port (overrides config)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            IngestJob job = ingest_config.empty() ? IngestJob{} : load_ingest_config(ingest_config);
            if (!scenes_dir.empty()) job.scenes = list_scene_files(scenes_dir);
            if (!ingest_store.empty()) job.store = ingest_store;
            if (ingest->count("--seed")) {
                job.featurizer.seed = ingest_seed;
                job.lsh.seed = ingest_seed;
            }
            if (ingest->count("--parallelism")) job.parallelism = parallelism;
            if (no_thumbs) job.thumbnails = false;
            if (job.store.empty()) throw Error(ErrorCode::kInvalidArgument, "--store is required");
            const auto report = run_ingest(job);
            std::printf("tiles\t%zu\nstore\t%s\nindex\t%s\nelapsed_s\t%.3f\n", report.tile_count,
                        report.store_path.c_str(), report.index_path.c_str(), report.elapsed_s);
        } else if (*exact || *lsh) {
            const FeatureStore store = FeatureStore::open(query_store);
            QuerySpec q;
            q.query = store.get(query_id);
            q.k = query_k;
            q.exclude_self = exclude_self;
            q.self_id = query_id;
            if (*exact) {
                print_results(brute_force_search(store, q));
            } else {
                const LshIndex index = load_index_for(StorePaths::for_base(query_store).lsh, store);
                print_results(lsh_search(index, store, q));
            }
        } else if (*eval) {
            const FeatureStore store = FeatureStore::open(eval_store);
            const LshIndex index = load_index_for(StorePaths::for_base(eval_store).lsh, store);
            const auto r = run_lsh_eval(store, index, eval_queries, eval_k, eval_seed);
            std::printf("queries\t%zu\nk\t%zu\nrecall@%zu\t%.4f\npredicted_recall@%zu\t%.4f\nmean_candidates\t%.1f\n",
                        r.queries, r.k, r.k, r.recall, r.k, r.predicted_recall, r.mean_candidates);
            print_latency("lsh", r.lsh);
            print_latency("exact", r.exact);
        } else if (*prec) {
            const auto corpus = make_labeled_corpus(classes, per_class, noise_bits, prec_seed);
            const auto index = LshIndex::build(corpus.vectors, make_family(prec_seed));
            std::printf("precision@%zu_exact\t%.4f\n", prec_k, labeled_precision_at_k(corpus, prec_k, nullptr));
            std::printf("precision@%zu_lsh\t%.4f\n", prec_k, labeled_precision_at_k(corpus, prec_k, &index));
        } else if (*build) {
            const FeatureStore store = FeatureStore::open(build_store);
            const auto family = make_family(build_params.seed, build_params.tables, build_params.bits);
            build_index(store, family, {build_params.bucket_cap, 1}).save(StorePaths::for_base(build_store).lsh);
        } else if (*import) {
            const auto ids = read_id_list(import_ids);
            FeatureStoreBuilder builder;
            for (const auto& [id, f] : import_float_features(import_features, ids)) builder.put(id, binarize(f));
            const FeatureStore store = builder.seal(import_store);
            build_index(store, make_family(import_seed)).save(StorePaths::for_base(import_store).lsh);
            std::printf("tiles\t%zu\n", store.size());
        } else if (*serve) {
            ServiceConfig cfg = load_service_config(serve_config);
            if (!serve_store.empty()) cfg.store = serve_store;
            if (serve_port >= 0) cfg.port = serve_port;
            if (cfg.store.empty()) throw Error(ErrorCode::kInvalidArgument, "no store configured");
            QueryService service(cfg);
            service.load_index();
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::fprintf(stderr, "serving %zu tiles on %s:%d\n", service.store().size(), cfg.listen_addr.c_str(),
                         cfg.port);
            if (!service.listen()) {
                std::fprintf(stderr, "error: cannot listen on %s:%d\n", cfg.listen_addr.c_str(), cfg.port);
                return 1;
            }
            g_service = nullptr;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error (%s): %s\n", error_code_name(e.code()), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
