#include <gtest/gtest.h>

#include <httplib.h>
#include <json.hpp>

#include <regex>
#include <thread>

#include "test_support.hpp"
#include "tilesearch/error.hpp"
#include "tilesearch/image_io.hpp"
#include "tilesearch/ingest.hpp"
#include "tilesearch/service.hpp"

using namespace tilesearch;
using nlohmann::json;
using tilesearch::testing::random_raster;
using tilesearch::testing::ScratchDir;
namespace fs = std::filesystem;

namespace {

// One 256x256 scene (9 tiles) at lon = -120 + 0.001 px, lat = 40 - 0.001 py.
class ServiceTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new ScratchDir("service");
        raster_ = new Raster(random_raster("field", 256, 256, 77));
        const auto scene = dir_->path() / "field.png";
        write_png(scene, *raster_);
        GeoTransform geo;
        geo.c = {-120.0, 0.001, 0.0, 40.0, 0.0, -0.001};
        write_geo_sidecar(scene, geo);
        IngestJob job;
        job.scenes = {scene};
        job.store = dir_->path() / "corpus";
        job.featurizer.seed = 1;
        job.lsh.seed = 2;
        run_ingest(job);
    }
    static void TearDownTestSuite() {
        delete raster_;
        delete dir_;
    }

    static ServiceConfig config() {
        ServiceConfig c;
        c.store = dir_->path() / "corpus";
        c.max_concurrency = 4;
        c.default_k = 1000;
        return c;
    }

    static std::unique_ptr<QueryService> loaded_service() {
        auto s = std::make_unique<QueryService>(config());
        s->load_index();
        return s;
    }

    static json body_of(const HttpResponse& r) { return json::parse(r.body); }

    static ScratchDir* dir_;
    static Raster* raster_;
};

ScratchDir* ServiceTest::dir_ = nullptr;
Raster* ServiceTest::raster_ = nullptr;

} // namespace

TEST_F(ServiceTest, IncludeSelfReturnsQueryAtDistanceZero) {
    auto svc = loaded_service();
    for (const char* method : {"exact", "lsh"}) {
        const auto r = svc->search({{"tile", "field:1:1"}, {"k", "1"}, {"method", method}, {"include_self", "true"}});
        ASSERT_EQ(r.status, 200) << r.body;
        const auto b = body_of(r);
        ASSERT_EQ(b.size(), 1u);
        EXPECT_EQ(b[0]["tile_id"], "field:1:1");
        EXPECT_EQ(b[0]["distance"], 0);
        EXPECT_EQ(b[0]["rank"], 1);
        EXPECT_DOUBLE_EQ(b[0]["lon"].get<double>(), -120.0 + 0.001 * 128);
        EXPECT_DOUBLE_EQ(b[0]["lat"].get<double>(), 40.0 - 0.001 * 128);
    }
}

TEST_F(ServiceTest, SelfExcludedByDefault) {
    auto svc = loaded_service();
    const auto b = body_of(svc->search({{"tile", "field:0:0"}, {"method", "exact"}}));
    ASSERT_EQ(b.size(), 8u);
    for (std::size_t i = 0; i < b.size(); ++i) {
        EXPECT_NE(b[i]["tile_id"], "field:0:0");
        EXPECT_EQ(b[i]["rank"], i + 1);
        if (i) EXPECT_LE(b[i - 1]["distance"].get<int>(), b[i]["distance"].get<int>());
    }
}

TEST_F(ServiceTest, ExactAndLshAgreeWhenCandidatesCoverTopK) {
    // Random tiles sit near distance 256 from each other, so short keys are
    // needed for their buckets to meet.
    QueryService service(config());
    auto* svc = &service;
    const auto& store = svc->store();
    svc->attach_index(build_index(store, make_family(3, 32, 3)));
    const auto index = build_index(store, make_family(3, 32, 3));
    int compared = 0;
    for (std::size_t row = 0; row < store.size(); ++row) {
        const auto exact = svc->search({{"tile", store.id(row)}, {"k", "3"}, {"method", "exact"}});
        const auto lsh = svc->search({{"tile", store.id(row)}, {"k", "3"}, {"method", "lsh"}});
        const auto cand = index.candidates(store.vector(row));
        bool covered = true;
        for (const auto& r : body_of(exact)) {
            const auto other = *store.find(r["tile_id"].get<std::string>());
            covered &= std::binary_search(cand.begin(), cand.end(), static_cast<std::uint32_t>(other));
        }
        if (!covered) continue;
        ++compared;
        EXPECT_EQ(exact.body, lsh.body);
    }
    EXPECT_GT(compared, 0);
}

TEST_F(ServiceTest, ErrorResponses) {
    auto svc = loaded_service();
    const auto unknown = svc->search({{"tile", "nowhere:0:0"}});
    EXPECT_EQ(unknown.status, 404);
    EXPECT_EQ(body_of(unknown)["error"]["code"], "not_found");
    EXPECT_TRUE(body_of(unknown)["error"]["message"].is_string());

    for (const char* k : {"0", "-1", "abc", "1000001", ""}) {
        const auto r = svc->search({{"tile", "field:0:0"}, {"k", k}});
        EXPECT_EQ(r.status, 400) << k;
        EXPECT_EQ(body_of(r)["error"]["code"], "bad_request");
    }
    EXPECT_EQ(svc->search({{"tile", "field:0:0"}, {"method", "fuzzy"}}).status, 400);
    EXPECT_EQ(svc->search({{"tile", "field:0:0"}, {"include_self", "maybe"}}).status, 400);
    EXPECT_EQ(svc->search({}).status, 400);
}

TEST_F(ServiceTest, OverloadRejectsFast) {
    auto svc = loaded_service();
    std::vector<AdmissionControl::Ticket> held;
    for (int i = 0; i < 4; ++i) held.push_back(svc->admission().try_acquire());
    for (const auto& t : held) ASSERT_TRUE(t);
    const auto r = svc->search({{"tile", "field:0:0"}});
    EXPECT_EQ(r.status, 503);
    EXPECT_EQ(body_of(r)["error"]["code"], "overloaded");
    held.pop_back();
    EXPECT_EQ(svc->search({{"tile", "field:0:0"}}).status, 200);
    held.clear();
    EXPECT_EQ(svc->admission().in_flight(), 0u);
}

TEST_F(ServiceTest, IndexLoadedTransition) {
    QueryService svc(config());
    EXPECT_FALSE(body_of(svc.health())["index_loaded"].get<bool>());
    const auto r = svc.search({{"tile", "field:0:0"}});
    EXPECT_EQ(r.status, 503);
    EXPECT_EQ(body_of(r)["error"]["code"], "index_not_loaded");
    EXPECT_EQ(svc.search({{"tile", "field:0:0"}, {"method", "exact"}}).status, 200);
    svc.load_index();
    EXPECT_TRUE(body_of(svc.health())["index_loaded"].get<bool>());
    EXPECT_EQ(svc.search({{"tile", "field:0:0"}}).status, 200);
}

TEST_F(ServiceTest, Health) {
    auto svc = loaded_service();
    const auto r = svc->health();
    EXPECT_EQ(r.status, 200);
    const auto b = body_of(r);
    EXPECT_EQ(b["status"], "ok");
    EXPECT_EQ(b["corpus_size"], 9);
}

TEST_F(ServiceTest, TilesByBoundingBox) {
    auto svc = loaded_service();
    auto ids = [&](const std::string& bbox) {
        const auto r = svc->tiles({{"bbox", bbox}});
        EXPECT_EQ(r.status, 200) << bbox;
        std::set<std::string> out;
        for (const auto& t : body_of(r)) out.insert(t["tile_id"].get<std::string>());
        return out;
    };
    EXPECT_TRUE(ids("0,0,1,1").empty());
    // Whole scene extent: lon [-120, -119.744], lat [39.744, 40].
    EXPECT_EQ(ids("-120,39.744,-119.744,40").size(), 9u);
    // Center of field:2:0 sits at px (192, 64).
    const double lon = -120.0 + 0.001 * 192, lat = 40.0 - 0.001 * 64;
    char bbox[128];
    std::snprintf(bbox, sizeof(bbox), "%.6f,%.6f,%.6f,%.6f", lon - 0.01, lat - 0.01, lon + 0.01, lat + 0.01);
    EXPECT_EQ(ids(bbox), std::set<std::string>{"field:2:0"});
    // Corners given in either order.
    std::snprintf(bbox, sizeof(bbox), "%.6f,%.6f,%.6f,%.6f", lon + 0.01, lat + 0.01, lon - 0.01, lat - 0.01);
    EXPECT_EQ(ids(bbox), std::set<std::string>{"field:2:0"});

    const auto one = body_of(svc->tiles({{"bbox", bbox}}));
    EXPECT_NEAR(one[0]["lon"].get<double>(), lon, 1e-12);
    EXPECT_NEAR(one[0]["lat"].get<double>(), lat, 1e-12);

    for (const char* bad : {"", "1,2,3", "1,2,3,4,5", "a,b,c,d", "1,,2,3", "1,2,3,nan"}) {
        EXPECT_EQ(svc->tiles({{"bbox", bad}}).status, 400) << bad;
    }
    EXPECT_EQ(svc->tiles({}).status, 400);
}

TEST_F(ServiceTest, ThumbnailMatchesExtractedPixels) {
    auto svc = loaded_service();
    for (const char* id : {"field:0:0", "field:2:1"}) {
        const auto r = svc->thumbnail(id);
        ASSERT_EQ(r.status, 200);
        EXPECT_EQ(r.content_type, "image/png");
        const std::vector<std::uint8_t> bytes(r.body.begin(), r.body.end());
        const Raster png = decode_png(bytes);
        EXPECT_EQ(png.scene().width_px, 128u);
        EXPECT_EQ(png.scene().height_px, 128u);
        EXPECT_EQ(png.pixels(), extract(*raster_, TileId::parse(id)).data);
    }
    EXPECT_EQ(svc->thumbnail("field:9:9").status, 404);
    EXPECT_EQ(svc->thumbnail("garbage").status, 404);
}

TEST(ServiceConfigTest, EnvOverrides) {
    ServiceConfig c;
    std::map<std::string, std::string> env{{"LISTEN_ADDR", "0.0.0.0:9090"}, {"STORE_PATH", "/data/x"}, {"MAX_CONCURRENCY", "3"}};
    auto getenv = [&](const char* k) -> const char* {
        auto it = env.find(k);
        return it == env.end() ? nullptr : it->second.c_str();
    };
    apply_env_overrides(c, getenv);
    EXPECT_EQ(c.listen_addr, "0.0.0.0");
    EXPECT_EQ(c.port, 9090);
    EXPECT_EQ(c.store, "/data/x");
    EXPECT_EQ(c.max_concurrency, 3u);

    env = {{"LISTEN_ADDR", "10.0.0.1"}};
    apply_env_overrides(c, getenv);
    EXPECT_EQ(c.listen_addr, "10.0.0.1");
    EXPECT_EQ(c.port, 9090);

    env = {{"MAX_CONCURRENCY", "0"}};
    EXPECT_THROW(apply_env_overrides(c, getenv), Error);
    env = {{"LISTEN_ADDR", "host:99999"}};
    EXPECT_THROW(apply_env_overrides(c, getenv), Error);

    ServiceConfig defaults;
    EXPECT_EQ(defaults.max_concurrency, 16u);
    EXPECT_EQ(defaults.default_k, 1000u);
}

TEST(ServiceConfigTest, ConfigFile) {
    ScratchDir dir("service_cfg");
    std::ofstream(dir / "svc.json") << R"({"store": "/s", "port": 1234, "max_concurrency": 2, "default_k": 30})";
    const auto c = load_service_config(dir / "svc.json");
    EXPECT_EQ(c.store, "/s");
    EXPECT_EQ(c.port, 1234);
    EXPECT_EQ(c.max_concurrency, 2u);
    EXPECT_EQ(c.default_k, 30u);
    std::ofstream(dir / "bad.json") << R"({"max_concurrency": 0})";
    EXPECT_THROW(load_service_config(dir / "bad.json"), Error);
}

TEST_F(ServiceTest, OverHttp) {
    auto cfg = config();
    cfg.max_concurrency = 16;
    QueryService svc(cfg);
    svc.load_index();
    std::mutex mu;
    std::vector<std::string> log;
    svc.set_log_sink([&](const std::string& line) {
        std::lock_guard lock(mu);
        log.push_back(line);
    });
    const int port = svc.bind_ephemeral();
    ASSERT_GT(port, 0);
    std::thread server([&] { svc.listen_after_bind(); });
    svc.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    auto health = client.Get("/v1/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(health->get_header_value("Access-Control-Allow-Origin"), "*");

    auto thumb = client.Get("/v1/thumbnail/field:1:2.png");
    ASSERT_TRUE(thumb);
    EXPECT_EQ(thumb->status, 200);
    EXPECT_EQ(thumb->get_header_value("Content-Type"), "image/png");

    auto missing = client.Get("/v1/search?tile=nope:0:0");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);
    EXPECT_EQ(json::parse(missing->body)["error"]["code"], "not_found");

    auto unrouted = client.Get("/v2/other");
    ASSERT_TRUE(unrouted);
    EXPECT_EQ(unrouted->status, 404);

    // Concurrent identical queries give identical bodies.
    const std::string path = "/v1/search?tile=field:1:1&k=5&method=lsh";
    const auto reference = client.Get(path);
    ASSERT_TRUE(reference);
    ASSERT_EQ(reference->status, 200);
    std::vector<std::thread> workers;
    std::atomic<int> mismatches{0};
    for (int t = 0; t < 8; ++t) {
        workers.emplace_back([&] {
            httplib::Client c("127.0.0.1", port);
            for (int i = 0; i < 20; ++i) {
                auto r = c.Get(path);
                if (!r || r->status != 200 || r->body != reference->body) ++mismatches;
            }
        });
    }
    for (auto& w : workers) w.join();
    EXPECT_EQ(mismatches.load(), 0);

    svc.stop();
    server.join();

    std::lock_guard lock(mu);
    ASSERT_GE(log.size(), 5u);
    const std::regex line(R"(^GET /\S+ \d{3} \d+\.\d{3}$)");
    for (const auto& l : log) EXPECT_TRUE(std::regex_match(l, line)) << l;
    EXPECT_TRUE(log[0].starts_with("GET /v1/health 200 "));
}
