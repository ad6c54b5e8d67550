#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "../support/tempdir.hpp"
#include "whalesift/annotation_service.hpp"

using namespace whalesift;
using namespace whalesift::annot;
using nlohmann::json;
using whalesift::testing::TempDir;
namespace fs = std::filesystem;

namespace {

Manifest three_videos() {
    Manifest m;
    for (int i = 1; i <= 3; ++i) add_video(m, {format_local_id(i), 60.0 + i, Timestamp{"2024-06-01T00:00:00Z"}, "humpback whale"});
    upsert_label(m, "vid_0003", Label::irrelevant);
    return m;
}

/// Service on an ephemeral port, torn down with the fixture.
struct Running {
    TempDir dir;
    fs::path manifest_path = dir / "manifest.ndjson";
    std::unique_ptr<AnnotationService> service;
    std::thread thread;
    std::unique_ptr<httplib::Client> client;

    explicit Running(const Manifest& m, std::optional<fs::path> ui = std::nullopt) {
        save(m, manifest_path);
        fs::create_directories(dir / "strips");
        service = std::make_unique<AnnotationService>(ServiceConfig{manifest_path, dir / "strips", "127.0.0.1", 0, ui});
        const int port = service->bind();
        thread = std::thread([this] { service->run(); });
        service->wait_until_ready();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
    }
    ~Running() {
        service->stop();
        thread.join();
    }

    json get(const std::string& path, int expect = 200) {
        auto res = client->Get(path);
        REQUIRE(res);
        CHECK(res->status == expect);
        return json::parse(res->body);
    }
    std::pair<int, json> post(const std::string& path, const std::string& body) {
        auto res = client->Post(path, body, "application/json");
        REQUIRE(res);
        return {res->status, json::parse(res->body)};
    }
    std::pair<int, json> post(const std::string& path, const json& body) { return post(path, body.dump()); }
};

}  // namespace

TEST_CASE("validate_interval rules") {
    CHECK_FALSE(validate_interval(Label::relevant, {2.0, 14.5}));
    CHECK(validate_interval(Label::relevant, {0.0, 9.9}) == std::optional<std::string>("below 10 s"));
    CHECK(validate_interval(Label::relevant, {3.0, 25.0}) == std::optional<std::string>("above 20 s"));
    CHECK_FALSE(validate_interval(Label::relevant, {5.0, 15.0}));
    CHECK_FALSE(validate_interval(Label::relevant, {5.0, 25.0}));
    for (Interval iv : {Interval{0, 15}, Interval{3, 18}, Interval{0, 12}})
        CHECK(validate_interval(Label::irrelevant, iv)->find("machine-assigned") != std::string::npos);
}

TEST_CASE("listing and progress") {
    Running s(three_videos());
    CHECK(s.get("/api/videos?status=unlabeled")["videos"].size() == 2);
    CHECK(s.get("/api/videos?status=irrelevant")["videos"].size() == 1);
    CHECK(s.get("/api/videos")["videos"].size() == 3);
    CHECK(s.get("/api/videos?status=weird", 400).contains("error"));
    const json p = s.get("/api/progress");
    CHECK(p == json{{"irrelevant", 1}, {"relevant", 0}, {"unlabeled", 2}, {"total", 3}});
    const json t = s.get("/api/videos/vid_0001");
    CHECK(t["local_id"] == "vid_0001");
    CHECK(t["label"].is_null());
    CHECK(t["version"] == 0);
    CHECK(t["frames"].empty());
    s.get("/api/videos/vid_9999", 404);
}

TEST_CASE("labels and intervals persist before the response") {
    Running s(three_videos());
    auto [st, body] = s.post("/api/videos/vid_0001/label", json{{"label", "relevant"}, {"version", 0}});
    CHECK(st == 200);
    CHECK(body["version"] == 1);
    CHECK(load(s.manifest_path).at("vid_0001").label == Label::relevant);

    std::tie(st, body) = s.post("/api/videos/vid_0001/interval", json{{"start_s", 3.0}, {"end_s", 25.0}, {"version", 1}});
    CHECK(st == 422);
    CHECK(body["error"] == "above 20 s");
    std::tie(st, body) = s.post("/api/videos/vid_0001/interval", json{{"start_s", 2.0}, {"end_s", 14.5}, {"version", 1}});
    CHECK(st == 200);
    CHECK(body["interval"]["end_s"] == 14.5);
    const LabeledVideo& saved = load(s.manifest_path).at("vid_0001");
    REQUIRE(saved.interval);
    CHECK(saved.interval->length() == 12.5);
    CHECK_FALSE(interval_violation(Label::relevant, *saved.interval));
    CHECK(s.get("/api/videos/vid_0001")["version"] == 2);

    std::tie(st, body) = s.post("/api/videos/vid_0003/interval", json{{"start_s", 0.0}, {"end_s", 15.0}, {"version", 1}});
    CHECK(st == 422);
    CHECK(body["error"].get<std::string>().find("machine-assigned") != std::string::npos);
    std::tie(st, body) = s.post("/api/videos/vid_0002/interval", json{{"start_s", 0.0}, {"end_s", 12.0}, {"version", 0}});
    CHECK(st == 422);
    std::tie(st, body) = s.post("/api/videos/vid_0001/interval", json{{"start_s", 55.0}, {"end_s", 70.0}, {"version", 2}});
    CHECK(st == 422);  // past the end of a 61 s video
}

TEST_CASE("stale versions conflict and leave the manifest untouched") {
    Running s(three_videos());
    const std::string before = read_file(s.manifest_path);
    auto [st, body] = s.post("/api/videos/vid_0003/label", json{{"label", "relevant"}, {"version", 0}});
    CHECK(st == 409);
    CHECK(body["current_version"] == 1);
    CHECK(read_file(s.manifest_path) == before);
}

TEST_CASE("malformed requests") {
    Running s(three_videos());
    CHECK(s.post("/api/videos/vid_0001/label", std::string("{nope")).first == 400);
    CHECK(s.post("/api/videos/vid_0001/label", json{{"label", "relevant"}}).first == 400);
    CHECK(s.post("/api/videos/vid_0001/label", json{{"label", "maybe"}, {"version", 0}}).first == 422);
    CHECK(s.post("/api/videos/vid_0001/interval", json{{"start_s", "a"}, {"version", 0}}).first == 422);
    CHECK(s.post("/api/videos/vid_4444/label", json{{"label", "relevant"}, {"version", 0}}).first == 404);
    CHECK(load(s.manifest_path) == three_videos());
}

TEST_CASE("concurrent conflicting writes: exactly one wins") {
    Running s(three_videos());
    const int port = s.client->port();
    std::atomic<int> ok{0}, conflict{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t)
        threads.emplace_back([&, t] {
            httplib::Client c("127.0.0.1", port);
            const json body = {{"label", t % 2 ? "relevant" : "irrelevant"}, {"version", 0}};
            auto res = c.Post("/api/videos/vid_0002/label", body.dump(), "application/json");
            if (res && res->status == 200) ++ok;
            if (res && res->status == 409) ++conflict;
        });
    for (auto& th : threads) th.join();
    CHECK(ok == 1);
    CHECK(conflict == 7);
    CHECK(load(s.manifest_path).at("vid_0002").version == 1);
}

TEST_CASE("frame strips are served from the cache") {
    Running s(three_videos());
    const fs::path strips = s.dir / "strips";
    fs::create_directories(frame_dir(strips, "vid_0001"));
    for (int n = 0; n < 3; ++n) std::ofstream(frame_path(strips, "vid_0001", n)) << "jpeg-" << n;
    save_frame_index(strips, FrameIndex{"vid_0001", {0.0, 61.0}, 3, {0.0, 20.0, 40.0}});

    const json t = s.get("/api/videos/vid_0001");
    REQUIRE(t["frames"].size() == 3);
    CHECK(t["frames"][1]["timestamp_s"] == 20.0);
    CHECK(t["frames"][2]["url"] == "/api/videos/vid_0001/frames/2.jpg");
    auto res = s.client->Get("/api/videos/vid_0001/frames/2.jpg");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == "jpeg-2");
    CHECK(res->get_header_value("Content-Type") == "image/jpeg");
    for (const char* bad : {"/api/videos/vid_0001/frames/9.jpg", "/api/videos/vid_0001/frames/x.jpg",
                            "/api/videos/vid_0001/frames/1.png", "/api/videos/vid_0009/frames/0.jpg"}) {
        auto r = s.client->Get(bad);
        REQUIRE(r);
        CHECK(r->status == 404);
    }
}

TEST_CASE("single writer lock and static UI mount") {
    TempDir ui;
    std::ofstream(ui / "index.html") << "<html>ui</html>";
    Running s(three_videos(), ui.path());
    CHECK_THROWS_AS(AnnotationService(ServiceConfig{s.manifest_path, s.dir / "strips", "127.0.0.1", 0, std::nullopt}),
                    LockHeldError);
    auto res = s.client->Get("/index.html");
    REQUIRE(res);
    CHECK(res->body == "<html>ui</html>");
}
