#include "tilesearch/ingest.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "tilesearch/error.hpp"
#include "tilesearch/image_io.hpp"
#include "tilesearch/store.hpp"

namespace tilesearch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kind_name(FeaturizerKind kind) {
    return kind == FeaturizerKind::kRandomHyperplane ? "random-hyperplane" : "external-import";
}

FeaturizerKind parse_kind(const std::string& s) {
    if (s == "random-hyperplane") return FeaturizerKind::kRandomHyperplane;
    if (s == "external-import") return FeaturizerKind::kExternalImport;
    throw Error(ErrorCode::kInvalidArgument, "unknown featurizer kind '" + s + "'");
}

json scene_to_json(const Scene& s) {
    return {{"name", s.name},
            {"width", s.width_px},
            {"height", s.height_px},
            {"bands", s.bands},
            {"bit_depth", s.bit_depth},
            {"geo_transform", s.geo.c}};
}

Scene scene_from_json(const json& j) {
    Scene s;
    s.name = j.at("name").get<std::string>();
    s.width_px = j.at("width").get<std::uint32_t>();
    s.height_px = j.at("height").get<std::uint32_t>();
    s.bands = j.at("bands").get<std::uint32_t>();
    s.bit_depth = j.at("bit_depth").get<std::uint32_t>();
    s.geo.c = j.at("geo_transform").get<std::array<double, 6>>();
    return s;
}

void write_json_atomic(const fs::path& path, const json& j) {
    const std::string text = j.dump(2) + "\n";
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::kCorruptFile, path.string() + ": " + e.what());
    }
}

json job_signature(const IngestJob& job) {
    json scenes = json::array();
    for (const auto& p : job.scenes) scenes.push_back(fs::absolute(p).lexically_normal().string());
    return {{"scenes", scenes},
            {"featurizer", {{"kind", kind_name(job.featurizer.kind)},
                            {"seed", job.featurizer.seed},
                            {"patch_size", job.featurizer.patch_size}}},
            {"tile", {{"size", job.grid.tile_size}, {"stride", job.grid.stride}}},
            {"thumbnails", job.thumbnails}};
}

std::string scene_slot(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene-%06zu", i);
    return buf;
}

struct SceneOutput {
    Scene scene;
    std::vector<std::string> ids;
    std::vector<BinaryFeature> features;
};

void write_checkpoint(const fs::path& dir, std::size_t i, const SceneOutput& out) {
    const fs::path base = dir / scene_slot(i);
    write_file_atomic(base.string() + ".feat",
                      std::span(reinterpret_cast<const std::uint8_t*>(out.features.data()),
                                out.features.size() * kFeatureBytes));
    json ids = out.ids;
    write_json_atomic(base.string() + ".json", {{"scene", scene_to_json(out.scene)}, {"ids", ids}});
    // Marker last: its presence means both files above are complete.
    write_file_atomic(base.string() + ".done", {});
}

std::optional<SceneOutput> read_checkpoint(const fs::path& dir, std::size_t i) {
    const fs::path base = dir / scene_slot(i);
    if (!fs::exists(base.string() + ".done")) return std::nullopt;
    SceneOutput out;
    const json meta = read_json(base.string() + ".json");
    out.scene = scene_from_json(meta.at("scene"));
    out.ids = meta.at("ids").get<std::vector<std::string>>();
    const auto bytes = read_file_bytes(base.string() + ".feat");
    if (bytes.size() != out.ids.size() * kFeatureBytes) {
        throw Error(ErrorCode::kCorruptFile, "checkpoint " + base.string() + " is inconsistent");
    }
    out.features.resize(out.ids.size());
    for (std::size_t r = 0; r < out.ids.size(); ++r) {
        out.features[r] = BinaryFeature::deserialize(std::span(bytes).subspan(r * kFeatureBytes, kFeatureBytes));
    }
    return out;
}

SceneOutput process_scene(const fs::path& path, const IngestJob& job, const fs::path& thumbs_dir,
                          std::map<std::uint32_t, HyperplaneFeaturizer>& featurizers) {
    Raster raster = read_scene(path);
    SceneOutput out;
    out.scene = raster.scene();
    const auto tiles = enumerate_tiles(out.scene, job.grid);

    auto it = featurizers.find(out.scene.bands);
    if (it == featurizers.end()) {
        it = featurizers.emplace(out.scene.bands,
                                 HyperplaneFeaturizer(job.featurizer, job.grid.tile_size, out.scene.bands)).first;
    }
    const HyperplaneFeaturizer& featurizer = it->second;
    const bool thumbs = job.thumbnails && out.scene.bands <= 4;
    if (thumbs) fs::create_directories(thumbs_dir / out.scene.name);

    out.features.resize(tiles.size());
    out.ids.resize(tiles.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        try {
            for (std::size_t t = next++; t < tiles.size(); t = next++) {
                const TilePixels px = extract(raster, tiles[t], job.grid);
                out.features[t] = featurizer.featurize(px);
                out.ids[t] = tiles[t].to_string();
                if (thumbs) write_file_bytes(thumbnail_path(thumbs_dir, tiles[t]), encode_png(px));
            }
        } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next = tiles.size();
        }
    };
    const unsigned workers = std::max(1u, job.parallelism);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

} // namespace

const Scene* Catalog::find_scene(std::string_view name) const {
    for (const auto& s : scenes) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

void write_catalog(const fs::path& path, const Catalog& catalog) {
    json scenes = json::array();
    for (const auto& s : catalog.scenes) scenes.push_back(scene_to_json(s));
    write_json_atomic(path, {{"version", 1},
                             {"tile", {{"size", catalog.grid.tile_size}, {"stride", catalog.grid.stride}}},
                             {"featurizer", {{"kind", kind_name(catalog.featurizer.kind)},
                                             {"seed", catalog.featurizer.seed},
                                             {"patch_size", catalog.featurizer.patch_size}}},
                             {"lsh", {{"seed", catalog.lsh.seed},
                                      {"tables", catalog.lsh.tables},
                                      {"bits", catalog.lsh.bits},
                                      {"bucket_cap", catalog.lsh.bucket_cap}}},
                             {"scenes", scenes}});
}

Catalog read_catalog(const fs::path& path) {
    const json j = read_json(path);
    try {
        Catalog c;
        c.grid.tile_size = j.at("tile").at("size").get<std::uint32_t>();
        c.grid.stride = j.at("tile").at("stride").get<std::uint32_t>();
        const auto& f = j.at("featurizer");
        c.featurizer.kind = parse_kind(f.at("kind").get<std::string>());
        c.featurizer.seed = f.at("seed").get<std::uint64_t>();
        c.featurizer.patch_size = f.at("patch_size").get<std::uint32_t>();
        const auto& l = j.at("lsh");
        c.lsh.seed = l.at("seed").get<std::uint64_t>();
        c.lsh.tables = l.at("tables").get<std::uint32_t>();
        c.lsh.bits = l.at("bits").get<std::uint32_t>();
        c.lsh.bucket_cap = l.at("bucket_cap").get<std::uint64_t>();
        for (const auto& s : j.at("scenes")) c.scenes.push_back(scene_from_json(s));
        return c;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::kCorruptFile, path.string() + ": " + e.what());
    }
}

fs::path thumbnail_path(const fs::path& thumbs_dir, const TileId& tile) {
    return thumbs_dir / tile.scene / (std::to_string(tile.grid_x) + "_" + std::to_string(tile.grid_y) + ".png");
}

std::vector<fs::path> list_scene_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, dir.string() + " is not a directory");
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".ppm" || ext == ".raw") out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
        return a.filename().string() < b.filename().string();
    });
    return out;
}

IngestReport run_ingest(const IngestJob& job) {
    const auto start = std::chrono::steady_clock::now();
    job.grid.validate();
    if (job.parallelism == 0) throw Error(ErrorCode::kInvalidArgument, "parallelism must be at least 1");
    if (job.featurizer.kind != FeaturizerKind::kRandomHyperplane) {
        throw Error(ErrorCode::kInvalidArgument, "ingest computes features with the random-hyperplane featurizer");
    }
    if (job.store.empty()) throw Error(ErrorCode::kInvalidArgument, "store name is required");

    const auto paths = StorePaths::for_base(job.store);
    if (fs::exists(paths.feat) || fs::exists(paths.ids) || fs::exists(paths.lsh)) {
        throw Error(ErrorCode::kInvalidArgument, "store '" + job.store.string() + "' already exists");
    }

    std::set<std::string> names;
    for (const auto& p : job.scenes) {
        const std::string name = p.stem().string();
        if (!is_valid_scene_name(name)) {
            throw Error(ErrorCode::kInvalidArgument, "scene file name '" + p.filename().string() + "' is not a valid scene name");
        }
        if (!names.insert(name).second) {
            throw Error(ErrorCode::kDuplicateId, "two scenes are named '" + name + "'; tile ids would collide");
        }
    }

    if (job.store.has_parent_path()) fs::create_directories(job.store.parent_path());
    fs::create_directories(paths.checkpoint);
    const fs::path signature_path = paths.checkpoint / "job.json";
    const json signature = job_signature(job);
    if (fs::exists(signature_path)) {
        if (read_json(signature_path) != signature) {
            throw Error(ErrorCode::kInvalidArgument,
                        "checkpoint in " + paths.checkpoint.string() + " belongs to a different job");
        }
    } else {
        write_json_atomic(signature_path, signature);
    }

    IngestReport report;
    report.store_path = job.store;
    report.index_path = paths.lsh;

    std::map<std::uint32_t, HyperplaneFeaturizer> featurizers;
    std::size_t processed = 0;
    for (std::size_t i = 0; i < job.scenes.size(); ++i) {
        if (fs::exists(paths.checkpoint / (scene_slot(i) + ".done"))) {
            ++report.scenes_resumed;
            continue;
        }
        if (job.stop_after_scenes && processed == *job.stop_after_scenes) {
            report.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            return report;
        }
        const SceneOutput out = process_scene(job.scenes[i], job, paths.thumbs, featurizers);
        write_checkpoint(paths.checkpoint, i, out);
        ++processed;
    }

    Catalog catalog;
    catalog.grid = job.grid;
    catalog.featurizer = job.featurizer;
    catalog.lsh = job.lsh;
    FeatureStoreBuilder builder;
    for (std::size_t i = 0; i < job.scenes.size(); ++i) {
        auto out = read_checkpoint(paths.checkpoint, i);
        if (!out) throw Error(ErrorCode::kIo, "missing checkpoint for scene " + std::to_string(i));
        for (std::size_t r = 0; r < out->ids.size(); ++r) builder.put(std::move(out->ids[r]), out->features[r]);
        catalog.scenes.push_back(std::move(out->scene));
    }
    const FeatureStore store = builder.seal(job.store);
    const LshIndex index = build_index(store, make_family(job.lsh.seed, job.lsh.tables, job.lsh.bits),
                                       {job.lsh.bucket_cap, job.parallelism});
    index.save(paths.lsh);
    write_catalog(paths.scenes, catalog);
    fs::remove_all(paths.checkpoint);

    report.complete = true;
    report.tile_count = store.size();
    report.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

IngestJob load_ingest_config(const fs::path& path) {
    const json j = read_json(path);
    const fs::path root = path.has_parent_path() ? path.parent_path() : fs::path(".");
    auto resolve = [&](const std::string& p) {
        fs::path q(p);
        return q.is_absolute() ? q : root / q;
    };
    try {
        IngestJob job;
        const std::uint64_t seed = j.value("seed", std::uint64_t{0});
        job.featurizer.seed = seed;
        job.lsh.seed = seed;
        if (j.contains("scenes")) {
            for (const auto& s : j.at("scenes")) job.scenes.push_back(resolve(s.get<std::string>()));
        } else if (j.contains("scenes_dir")) {
            job.scenes = list_scene_files(resolve(j.at("scenes_dir").get<std::string>()));
        } else {
            throw Error(ErrorCode::kInvalidArgument, path.string() + ": needs 'scenes' or 'scenes_dir'");
        }
        job.store = resolve(j.at("store").get<std::string>());
        job.parallelism = j.value("parallelism", 1u);
        job.thumbnails = j.value("thumbnails", true);
        if (j.contains("featurizer")) {
            const auto& f = j.at("featurizer");
            job.featurizer.kind = parse_kind(f.value("kind", std::string("random-hyperplane")));
            job.featurizer.seed = f.value("seed", seed);
            job.featurizer.patch_size = f.value("patch_size", 16u);
        }
        if (j.contains("tile")) {
            job.grid.tile_size = j.at("tile").value("size", 128u);
            job.grid.stride = j.at("tile").value("stride", 64u);
        }
        if (j.contains("lsh")) {
            const auto& l = j.at("lsh");
            job.lsh.seed = l.value("seed", seed);
            job.lsh.tables = l.value("tables", kDefaultTables);
            job.lsh.bits = l.value("bits", kDefaultKeyBits);
            job.lsh.bucket_cap = l.value("bucket_cap", std::uint64_t{0});
        }
        return job;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
    }
}

} // namespace tilesearch
