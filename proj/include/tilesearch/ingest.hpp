#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "tilesearch/featurizer.hpp"
#include "tilesearch/lsh.hpp"
#include "tilesearch/tiler.hpp"

namespace tilesearch {

struct LshParams {
    std::uint64_t seed = 0;
    std::uint32_t tables = kDefaultTables;
    std::uint32_t bits = kDefaultKeyBits;
    std::uint64_t bucket_cap = 0;
};

/// Corpus-level metadata written beside a store as `<name>.scenes.json`:
/// tile grid, per-scene geometry and geo-transform, and the parameters the
/// corpus was built with.
struct Catalog {
    TileGrid grid;
    std::vector<Scene> scenes;
    FeaturizerSpec featurizer;
    LshParams lsh;

    const Scene* find_scene(std::string_view name) const;
};

void write_catalog(const std::filesystem::path& path, const Catalog& catalog);
Catalog read_catalog(const std::filesystem::path& path);

struct IngestJob {
    std::vector<std::filesystem::path> scenes;
    std::filesystem::path store;
    FeaturizerSpec featurizer;
    TileGrid grid;
    LshParams lsh;
    unsigned parallelism = 1;
    bool thumbnails = true;
    /// Stop (as if interrupted) after this many scenes are featurized in
    /// this run, leaving the checkpoint in place.
    std::optional<std::size_t> stop_after_scenes;
};

struct IngestReport {
    bool complete = false;
    std::size_t tile_count = 0;
    std::size_t scenes_resumed = 0;
    std::filesystem::path store_path;
    std::filesystem::path index_path;
    double elapsed_s = 0.0;
};

/// scene files -> tiles -> features -> sealed store -> LSH index.
///
/// Row order is scene order, then row-major tile order, independent of
/// `parallelism`. Each finished scene is checkpointed under `<name>.ckpt/`;
/// re-running the same job resumes from there and produces identical files.
IngestReport run_ingest(const IngestJob& job);

/// Regular files under `dir` with a .png, .ppm or .raw extension, sorted by name.
std::vector<std::filesystem::path> list_scene_files(const std::filesystem::path& dir);

/// JSON job description; relative paths resolve against the file's directory.
///
///   { "scenes": [paths] | "scenes_dir": dir, "store": path, "seed": int,
///     "parallelism": int, "thumbnails": bool,
///     "featurizer": {"kind": "random-hyperplane", "seed": int, "patch_size": int},
///     "tile": {"size": int, "stride": int},
///     "lsh": {"seed": int, "tables": int, "bits": int, "bucket_cap": int} }
///
/// "seed" is the default for both featurizer.seed and lsh.seed.
IngestJob load_ingest_config(const std::filesystem::path& path);

std::filesystem::path thumbnail_path(const std::filesystem::path& thumbs_dir, const TileId& tile);

} // namespace tilesearch
