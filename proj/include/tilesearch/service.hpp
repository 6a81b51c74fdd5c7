#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "tilesearch/ingest.hpp"
#include "tilesearch/lsh.hpp"
#include "tilesearch/store.hpp"

namespace httplib {
class Server;
}

namespace tilesearch {

struct ServiceConfig {
    std::filesystem::path store;
    std::string listen_addr = "127.0.0.1";
    int port = 8080;
    std::uint32_t max_concurrency = 16;
    std::uint32_t default_k = 1000;
    /// Defaults to `<store>.thumbs` when empty.
    std::filesystem::path thumbnail_dir;
    /// Value of Access-Control-Allow-Origin; empty disables CORS headers.
    std::string cors_origin = "*";
    bool log_requests = true;

    void validate() const;
};

/// Reads a JSON config file ({"store", "listen_addr", "port",
/// "max_concurrency", "default_k", "thumbnail_dir", "cors_origin",
/// "log_requests"}), then applies environment overrides.
ServiceConfig load_service_config(const std::filesystem::path& path);

/// LISTEN_ADDR ("host" or "host:port"), STORE_PATH, MAX_CONCURRENCY.
/// `getenv` is injectable for tests.
void apply_env_overrides(ServiceConfig& config,
                         const std::function<const char*(const char*)>& getenv = [](const char* k) {
                             return std::getenv(k);
                         });

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

using QueryParams = std::map<std::string, std::string>;

/// Counting admission gate; `try_acquire` fails fast instead of queueing.
class AdmissionControl {
public:
    explicit AdmissionControl(std::uint32_t limit) : limit_(limit) {}

    class Ticket {
    public:
        Ticket() = default;
        explicit Ticket(AdmissionControl* owner) : owner_(owner) {}
        Ticket(Ticket&& o) noexcept : owner_(std::exchange(o.owner_, nullptr)) {}
        Ticket& operator=(Ticket&& o) noexcept {
            release();
            owner_ = std::exchange(o.owner_, nullptr);
            return *this;
        }
        ~Ticket() { release(); }
        explicit operator bool() const { return owner_ != nullptr; }

    private:
        void release() {
            if (owner_) owner_->in_flight_.fetch_sub(1);
            owner_ = nullptr;
        }
        AdmissionControl* owner_ = nullptr;
    };

    Ticket try_acquire();
    std::uint32_t in_flight() const { return in_flight_.load(); }
    std::uint32_t limit() const { return limit_; }

private:
    std::uint32_t limit_;
    std::atomic<std::uint32_t> in_flight_{0};
};

/// HTTP facade over a sealed store and its LSH index. Ranking always comes
/// from brute_force_search / lsh_search; this class only formats results.
///
/// Handlers are safe to call concurrently. The index may be attached after
/// construction; until then lsh queries answer 503 and /v1/health reports
/// index_loaded=false.
class QueryService {
public:
    /// Opens the store and, if present, its scene catalog.
    explicit QueryService(ServiceConfig config);
    /// Serves an already-open store (tests, embedding).
    QueryService(ServiceConfig config, FeatureStore store, std::optional<Catalog> catalog);
    ~QueryService();

    /// Loads `<store>.lsh` and attaches it.
    void load_index();
    void attach_index(LshIndex index);
    bool index_loaded() const;

    HttpResponse search(const QueryParams& params);
    HttpResponse tiles(const QueryParams& params);
    HttpResponse thumbnail(std::string_view tile_id);
    HttpResponse health() const;

    AdmissionControl& admission() { return admission_; }
    const FeatureStore& store() const { return store_; }
    const ServiceConfig& config() const { return config_; }

    /// Sink for one-line request logs; defaults to stderr.
    void set_log_sink(std::function<void(const std::string&)> sink);

    /// Binds and serves until stop(). Returns false if the bind fails.
    bool listen();
    /// Binds to an ephemeral port on listen_addr; returns the port or -1.
    int bind_ephemeral();
    /// Serves on a socket bound by bind_ephemeral().
    bool listen_after_bind();
    void stop();
    void wait_until_ready() const;

private:
    struct TileCenter {
        std::optional<LonLat> lonlat;
    };

    void init_geometry();
    void install_routes();
    void log_line(const std::string& line);
    std::shared_ptr<const LshIndex> current_index() const;

    ServiceConfig config_;
    FeatureStore store_;
    std::optional<Catalog> catalog_;
    std::vector<TileCenter> centers_;
    AdmissionControl admission_;

    mutable std::mutex index_mu_;
    std::shared_ptr<const LshIndex> index_;

    std::mutex log_mu_;
    std::function<void(const std::string&)> log_sink_;

    std::unique_ptr<httplib::Server> server_;
};

/// Error body: {"error": {"code": ..., "message": ...}}.
std::string error_body(std::string_view code, std::string_view message);

} // namespace tilesearch
