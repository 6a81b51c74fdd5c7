#include "tilesearch/service.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <httplib.h>
#include <json.hpp>

#include "tilesearch/error.hpp"
#include "tilesearch/image_io.hpp"
#include "tilesearch/search_exact.hpp"

namespace tilesearch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint32_t kMaxK = 1'000'000;

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpResponse error_response(int status, std::string_view code, std::string_view message) {
    return {status, "application/json", error_body(code, message)};
}

std::optional<std::string> param(const QueryParams& params, const std::string& key) {
    auto it = params.find(key);
    if (it == params.end()) return std::nullopt;
    return it->second;
}

std::optional<std::uint64_t> parse_uint(std::string_view s) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::optional<bool> parse_bool(std::string_view s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    return std::nullopt;
}

std::optional<std::array<double, 4>> parse_bbox(const std::string& s) {
    std::array<double, 4> out{};
    std::size_t pos = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto comma = s.find(',', pos);
        const bool last = i == 3;
        if (last != (comma == std::string::npos)) return std::nullopt;
        const std::string field = s.substr(pos, last ? std::string::npos : comma - pos);
        if (field.empty()) return std::nullopt;
        char* end = nullptr;
        out[i] = std::strtod(field.c_str(), &end);
        if (end != field.c_str() + field.size() || !std::isfinite(out[i])) return std::nullopt;
        pos = comma + 1;
    }
    return out;
}

json lonlat_field(const std::optional<LonLat>& ll, bool lon) {
    if (!ll) return nullptr;
    return lon ? ll->lon : ll->lat;
}

thread_local std::chrono::steady_clock::time_point request_start;

} // namespace

std::string error_body(std::string_view code, std::string_view message) {
    return json{{"error", {{"code", code}, {"message", message}}}}.dump();
}

void ServiceConfig::validate() const {
    if (max_concurrency < 1) throw Error(ErrorCode::kInvalidArgument, "max_concurrency must be at least 1");
    if (default_k < 1) throw Error(ErrorCode::kInvalidArgument, "default_k must be at least 1");
    if (port < 0 || port > 65535) throw Error(ErrorCode::kInvalidArgument, "port out of range");
}

ServiceConfig load_service_config(const fs::path& path) {
    ServiceConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
        try {
            const json j = json::parse(in);
            if (j.contains("store")) cfg.store = j.at("store").get<std::string>();
            cfg.listen_addr = j.value("listen_addr", cfg.listen_addr);
            cfg.port = j.value("port", cfg.port);
            cfg.max_concurrency = j.value("max_concurrency", cfg.max_concurrency);
            cfg.default_k = j.value("default_k", cfg.default_k);
            if (j.contains("thumbnail_dir")) cfg.thumbnail_dir = j.at("thumbnail_dir").get<std::string>();
            cfg.cors_origin = j.value("cors_origin", cfg.cors_origin);
            cfg.log_requests = j.value("log_requests", cfg.log_requests);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
        }
    }
    apply_env_overrides(cfg);
    cfg.validate();
    return cfg;
}

void apply_env_overrides(ServiceConfig& cfg, const std::function<const char*(const char*)>& getenv) {
    if (const char* v = getenv("LISTEN_ADDR"); v && *v) {
        std::string s(v);
        const auto colon = s.rfind(':');
        if (colon != std::string::npos) {
            const auto port = parse_uint(std::string_view(s).substr(colon + 1));
            if (!port || *port > 65535) throw Error(ErrorCode::kInvalidArgument, "LISTEN_ADDR has a bad port");
            cfg.port = static_cast<int>(*port);
            s.resize(colon);
        }
        if (!s.empty()) cfg.listen_addr = s;
    }
    if (const char* v = getenv("STORE_PATH"); v && *v) cfg.store = v;
    if (const char* v = getenv("MAX_CONCURRENCY"); v && *v) {
        const auto n = parse_uint(v);
        if (!n || *n < 1 || *n > 1'000'000) throw Error(ErrorCode::kInvalidArgument, "MAX_CONCURRENCY must be >= 1");
        cfg.max_concurrency = static_cast<std::uint32_t>(*n);
    }
}

AdmissionControl::Ticket AdmissionControl::try_acquire() {
    std::uint32_t cur = in_flight_.load();
    while (cur < limit_) {
        if (in_flight_.compare_exchange_weak(cur, cur + 1)) return Ticket(this);
    }
    return Ticket();
}

// ---- QueryService --------------------------------------------------------

QueryService::QueryService(ServiceConfig config)
    : QueryService(config, FeatureStore::open(config.store),
                   fs::exists(StorePaths::for_base(config.store).scenes)
                       ? std::optional<Catalog>(read_catalog(StorePaths::for_base(config.store).scenes))
                       : std::nullopt) {}

QueryService::QueryService(ServiceConfig config, FeatureStore store, std::optional<Catalog> catalog)
    : config_(std::move(config)),
      store_(std::move(store)),
      catalog_(std::move(catalog)),
      admission_(config_.max_concurrency) {
    config_.validate();
    if (config_.thumbnail_dir.empty() && !config_.store.empty()) {
        config_.thumbnail_dir = StorePaths::for_base(config_.store).thumbs;
    }
    log_sink_ = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
    init_geometry();
}

QueryService::~QueryService() { stop(); }

void QueryService::init_geometry() {
    centers_.resize(store_.size());
    if (!catalog_) return;
    for (std::size_t row = 0; row < store_.size(); ++row) {
        try {
            const TileId id = TileId::parse(store_.id(row));
            if (const Scene* scene = catalog_->find_scene(id.scene)) {
                centers_[row].lonlat = tile_geo(*scene, id, catalog_->grid);
            }
        } catch (const Error&) {
            // ids that are not grid tile ids simply have no position
        }
    }
}

void QueryService::load_index() { attach_index(load_index_for(StorePaths::for_base(config_.store).lsh, store_)); }

void QueryService::attach_index(LshIndex index) {
    if (index.size() != store_.size()) {
        throw Error(ErrorCode::kInvalidArgument, "index does not match the served store");
    }
    auto ptr = std::make_shared<const LshIndex>(std::move(index));
    std::lock_guard lock(index_mu_);
    index_ = std::move(ptr);
}

std::shared_ptr<const LshIndex> QueryService::current_index() const {
    std::lock_guard lock(index_mu_);
    return index_;
}

bool QueryService::index_loaded() const { return current_index() != nullptr; }

HttpResponse QueryService::search(const QueryParams& params) {
    const auto tile = param(params, "tile");
    if (!tile || tile->empty()) return error_response(400, "bad_request", "missing 'tile' parameter");

    std::uint32_t k = config_.default_k;
    if (const auto ks = param(params, "k")) {
        const auto v = parse_uint(*ks);
        if (!v || *v < 1 || *v > kMaxK) {
            return error_response(400, "bad_request", "'k' must be an integer in [1, 1000000]");
        }
        k = static_cast<std::uint32_t>(*v);
    }
    const std::string method = param(params, "method").value_or("lsh");
    if (method != "lsh" && method != "exact") {
        return error_response(400, "bad_request", "'method' must be 'lsh' or 'exact'");
    }
    bool include_self = false;
    if (const auto s = param(params, "include_self")) {
        const auto b = parse_bool(*s);
        if (!b) return error_response(400, "bad_request", "'include_self' must be true or false");
        include_self = *b;
    }

    const auto ticket = admission_.try_acquire();
    if (!ticket) return error_response(503, "overloaded", "concurrent query limit reached");

    const auto row = store_.find(*tile);
    if (!row) return error_response(404, "not_found", "unknown tile '" + *tile + "'");

    QuerySpec q;
    q.query = store_.vector(*row);
    q.k = k;
    q.exclude_self = !include_self;
    q.self_id = *tile;

    std::vector<SearchResult> results;
    if (method == "exact") {
        results = brute_force_search(store_, q);
    } else {
        const auto index = current_index();
        if (!index) return error_response(503, "index_not_loaded", "LSH index is not loaded yet");
        results = lsh_search(*index, store_, q);
    }

    json body = json::array();
    for (const auto& r : results) {
        const auto& ll = centers_[store_.row_of(r.id)].lonlat;
        body.push_back({{"rank", r.rank},
                        {"tile_id", r.id},
                        {"distance", r.distance},
                        {"lon", lonlat_field(ll, true)},
                        {"lat", lonlat_field(ll, false)}});
    }
    return json_response(200, body);
}

HttpResponse QueryService::tiles(const QueryParams& params) {
    const auto raw = param(params, "bbox");
    if (!raw) return error_response(400, "bad_request", "missing 'bbox' parameter");
    const auto bbox = parse_bbox(*raw);
    if (!bbox) return error_response(400, "bad_request", "'bbox' must be lon1,lat1,lon2,lat2");
    const double lon_lo = std::min((*bbox)[0], (*bbox)[2]), lon_hi = std::max((*bbox)[0], (*bbox)[2]);
    const double lat_lo = std::min((*bbox)[1], (*bbox)[3]), lat_hi = std::max((*bbox)[1], (*bbox)[3]);

    json body = json::array();
    for (std::size_t row = 0; row < centers_.size(); ++row) {
        const auto& ll = centers_[row].lonlat;
        if (!ll) continue;
        if (ll->lon >= lon_lo && ll->lon <= lon_hi && ll->lat >= lat_lo && ll->lat <= lat_hi) {
            body.push_back({{"tile_id", store_.id(row)}, {"lon", ll->lon}, {"lat", ll->lat}});
        }
    }
    return json_response(200, body);
}

HttpResponse QueryService::thumbnail(std::string_view tile_id) {
    if (!store_.find(tile_id)) return error_response(404, "not_found", "unknown tile '" + std::string(tile_id) + "'");
    std::optional<TileId> id;
    try {
        id = TileId::parse(tile_id);
    } catch (const Error&) {
        return error_response(404, "not_found", "no thumbnail for '" + std::string(tile_id) + "'");
    }
    const fs::path path = thumbnail_path(config_.thumbnail_dir, *id);
    if (!fs::exists(path)) {
        return error_response(404, "not_found", "no thumbnail for '" + std::string(tile_id) + "'");
    }
    const auto bytes = read_file_bytes(path);
    return {200, "image/png", std::string(bytes.begin(), bytes.end())};
}

HttpResponse QueryService::health() const {
    return json_response(200, {{"status", "ok"}, {"corpus_size", store_.size()}, {"index_loaded", index_loaded()}});
}

void QueryService::set_log_sink(std::function<void(const std::string&)> sink) {
    std::lock_guard lock(log_mu_);
    log_sink_ = std::move(sink);
}

void QueryService::log_line(const std::string& line) {
    std::lock_guard lock(log_mu_);
    if (log_sink_) log_sink_(line);
}

void QueryService::install_routes() {
    server_ = std::make_unique<httplib::Server>();
    const std::size_t pool = config_.max_concurrency + 8;
    server_->new_task_queue = [pool] { return new httplib::ThreadPool(pool); };

    if (!config_.cors_origin.empty()) {
        server_->set_default_headers({{"Access-Control-Allow-Origin", config_.cors_origin}});
    }

    auto params_of = [](const httplib::Request& req) {
        QueryParams p;
        for (const auto& [k, v] : req.params) p.emplace(k, v);
        return p;
    };
    auto send = [](httplib::Response& res, const HttpResponse& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    auto guarded = [this, send](auto handler) {
        return [this, send, handler](const httplib::Request& req, httplib::Response& res) {
            try {
                send(res, handler(req));
            } catch (const Error& e) {
                send(res, error_response(500, error_code_name(e.code()), e.what()));
            } catch (const std::exception& e) {
                send(res, error_response(500, "internal", e.what()));
            }
        };
    };

    server_->Get("/v1/search", guarded([this, params_of](const httplib::Request& req) { return search(params_of(req)); }));
    server_->Get("/v1/tiles", guarded([this, params_of](const httplib::Request& req) { return tiles(params_of(req)); }));
    server_->Get(R"(/v1/thumbnail/(.+)\.png)",
                 guarded([this](const httplib::Request& req) { return thumbnail(req.matches[1].str()); }));
    server_->Get("/v1/health", guarded([this](const httplib::Request&) { return health(); }));

    server_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) {
            res.set_content(error_body(res.status == 404 ? "not_found" : "error", httplib::status_message(res.status)),
                            "application/json");
        }
    });
    server_->set_pre_routing_handler([](const httplib::Request&, httplib::Response&) {
        request_start = std::chrono::steady_clock::now();
        return httplib::Server::HandlerResponse::Unhandled;
    });
    if (config_.log_requests) {
        server_->set_logger([this](const httplib::Request& req, const httplib::Response& res) {
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - request_start).count();
            char buf[64];
            std::snprintf(buf, sizeof(buf), " %d %.3f", res.status, ms);
            log_line(req.method + " " + req.path + buf);
        });
    }
}

bool QueryService::listen() {
    install_routes();
    return server_->listen(config_.listen_addr, config_.port);
}

int QueryService::bind_ephemeral() {
    install_routes();
    return server_->bind_to_any_port(config_.listen_addr);
}

bool QueryService::listen_after_bind() { return server_ && server_->listen_after_bind(); }

void QueryService::stop() {
    if (server_) server_->stop();
}

void QueryService::wait_until_ready() const {
    if (server_) server_->wait_until_ready();
}

} // namespace tilesearch
