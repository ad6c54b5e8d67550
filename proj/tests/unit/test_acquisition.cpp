#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <fstream>
#include <set>
#include <thread>

#include "../support/tempdir.hpp"
#include "whalesift/acquisition.hpp"
#include "whalesift/corpus.hpp"

using namespace whalesift;
using namespace whalesift::acq;
using whalesift::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kYoutube = fs::path(WHALESIFT_FIXTURE_DIR) / "youtube";

struct Harness {
    explicit Harness(const std::string& fixture) : transport(kYoutube / fixture), bucket(5.0, 1.0, clock), client(transport, "test-key", bucket, &budget) {}
    FixtureTransport transport;
    SimulatedClock clock;
    TokenBucket bucket;
    QuotaBudget budget;
    YouTubeClient client;
};

}  // namespace

TEST_CASE("search request validation") {
    CHECK_NOTHROW((SearchRequest{"humpback whale", 50, std::nullopt}.check()));
    CHECK_NOTHROW((SearchRequest{"humpback whale", 1, std::nullopt}.check()));
    CHECK_THROWS_AS((SearchRequest{"", 10, std::nullopt}.check()), InvalidArgument);
    CHECK_THROWS_AS((SearchRequest{"q", 0, std::nullopt}.check()), InvalidArgument);
    CHECK_THROWS_AS((SearchRequest{"q", 51, std::nullopt}.check()), InvalidArgument);
}

TEST_CASE("ISO 8601 durations") {
    CHECK(parse_iso8601_duration("PT3M7S") == 187.0);
    CHECK(parse_iso8601_duration("PT1M12.5S") == 72.5);
    CHECK(parse_iso8601_duration("PT1H") == 3600.0);
    CHECK(parse_iso8601_duration("P1DT2H3M4S") == 86400.0 + 7200 + 180 + 4);
    CHECK(parse_iso8601_duration("P0D") == 0.0);
    CHECK(parse_iso8601_duration("P1W") == 604800.0);
    for (const char* bad : {"", "PT", "P", "3M", "PT5", "P1M", "PT1D", "PT1H1H1T", "five minutes", "PTxS"})
        CHECK_THROWS_AS(parse_iso8601_duration(bad), MalformedResponseError);
}

TEST_CASE("a recorded page parses into metadata") {
    Harness h("paged");
    const SearchPage page = h.client.search({"humpback whale", 2, std::nullopt});
    REQUIRE(page.items.size() == 2);
    CHECK(page.items[0].platform_video_id == "aB3xYz_0001");
    CHECK(page.items[0].duration_s == 72.5);
    CHECK(page.items[0].title == "AMAZING whale!!! Breach off Maui");
    CHECK(page.items[0].channel_ref == "UCsecretChannelAlpha");
    CHECK(page.items[0].published_at.iso8601 == "2019-07-14T18:02:11Z");
    CHECK(page.items[1].platform_video_id == "Qw7-LmN0002");
    CHECK(page.items[1].duration_s == 187.0);
    REQUIRE(page.next_page_token);
    CHECK(*page.next_page_token == "CAIQAA");
    CHECK(h.budget.used == kSearchCost + kVideosCost);
    CHECK((h.transport.requests() == std::vector<std::string>{"search?", "videos?aB3xYz_0001,Qw7-LmN0002"}));
}

TEST_CASE("an empty page has no items and no token") {
    Harness h("empty");
    const SearchPage page = h.client.search({"humpback whale", 50, std::nullopt});
    CHECK(page.items.empty());
    CHECK_FALSE(page.next_page_token);
    CHECK(h.transport.requests().size() == 1);  // no videos.list for zero ids
}

TEST_CASE("error responses map to distinct error kinds") {
    {
        Harness h("quota");
        try {
            h.client.search({"humpback whale", 50, std::nullopt});
            FAIL("expected quota error");
        } catch (const QuotaExceededError& e) {
            REQUIRE(e.retry_after_s);
            CHECK(*e.retry_after_s == 3600.0);
        }
    }
    {
        Harness h("auth");
        CHECK_THROWS_AS(h.client.search({"humpback whale", 50, std::nullopt}), AuthFailureError);
    }
    {
        Harness h("malformed");
        CHECK_THROWS_AS(h.client.search({"humpback whale", 50, std::nullopt}), MalformedResponseError);
    }
    {
        Harness h("paged");  // page token with no recording behaves like a dead network
        CHECK_THROWS_AS(h.client.search({"humpback whale", 50, std::string("nope")}), NetworkFailureError);
    }
    HttpResponse r;
    r.status = 429;
    CHECK_THROWS_AS(raise_api_error(r), QuotaExceededError);
    r.status = 401;
    CHECK_THROWS_AS(raise_api_error(r), AuthFailureError);
    r.status = 503;
    r.body = "<html>unavailable</html>";
    CHECK_THROWS_AS(raise_api_error(r), NetworkFailureError);
    r.status = 404;
    CHECK_THROWS_AS(raise_api_error(r), AcquisitionError);
    r.status = 200;
    r.body = "{not json";
    SimulatedClock clock;
    TokenBucket bucket(1.0, 1.0, clock);
    struct Canned : HttpTransport {
        HttpResponse r;
        HttpResponse get(const std::string&, const QueryParams&) override { return r; }
    } canned;
    canned.r = r;
    YouTubeClient client(canned, "k", bucket);
    CHECK_THROWS_AS(client.search({"q", 5, std::nullopt}), MalformedResponseError);
    CHECK_THROWS_AS(YouTubeClient(canned, "", bucket), AuthFailureError);
}

TEST_CASE("paging yields each platform id exactly once") {
    Harness h("paged");
    const auto all = search_all(h.client, "humpback whale", 100, 2);
    std::vector<std::string> ids;
    for (const auto& m : all) ids.push_back(m.platform_video_id);
    CHECK((ids == std::vector<std::string>{"aB3xYz_0001", "Qw7-LmN0002", "Zz9_TtT0003"}));
    CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == ids.size());

    Harness limited("paged");
    CHECK(search_all(limited.client, "humpback whale", 1, 2).size() == 1);
    CHECK(limited.transport.requests().size() == 2);  // stops after the first page
}

TEST_CASE("local quota budget stops requests") {
    Harness h("paged");
    h.budget.daily_units = 150;
    CHECK_NOTHROW(h.client.search({"humpback whale", 2, std::nullopt}));
    CHECK_THROWS_AS(h.client.search({"humpback whale", 2, std::string("CAIQAA")}), QuotaExceededError);
}

TEST_CASE("token bucket spacing under a simulated clock") {
    for (double rate : {0.5, 1.0, 3.0, 10.0, 250.0}) {
        for (int n : {1, 2, 7, 40}) {
            SimulatedClock clock;
            TokenBucket bucket(rate, 1.0, clock);
            const double start = clock.now_s();
            for (int i = 0; i < n; ++i) bucket.acquire();
            CHECK(clock.now_s() - start >= (n - 1) / rate - 1e-9);
            CHECK(clock.now_s() - start <= (n - 1) / rate + 1e-9);
        }
    }
    SimulatedClock clock;
    TokenBucket bucket(2.0, 1.0, clock);
    bucket.acquire();
    clock.advance(10.0);  // idle time does not bank more than one token
    bucket.acquire();
    const double t = clock.now_s();
    bucket.acquire();
    CHECK(clock.now_s() - t == doctest::Approx(0.5));
    CHECK_THROWS_AS(TokenBucket(0.0, 1.0, clock), InvalidArgument);
    CHECK_THROWS_AS(TokenBucket(1.0, 0.5, clock), InvalidArgument);
}

TEST_CASE("the client waits on the limiter between requests") {
    Harness h("paged");
    search_all(h.client, "humpback whale", 100, 2);
    // 4 requests at 5/s
    CHECK(h.clock.now_s() >= 3 / 5.0 - 1e-9);
}

TEST_CASE("anonymize strips identifying fields") {
    Anonymizer anon;
    RawVideoMeta meta{"aB3xYz_0001", "AMAZING whale!!!", 72.5, Timestamp{"2019-07-14T18:02:11Z"}, "UCsecretChannelAlpha"};
    const Anonymized a = anon.anonymize(meta, 42, "humpback whale", Timestamp{"2024-06-01T00:00:00Z"});
    CHECK(a.record.local_id == "vid_0042");
    CHECK(a.record.duration_s == 72.5);
    CHECK(a.record.query == "humpback whale");
    CHECK((a.mapping == PrivateMapEntry{"vid_0042", "aB3xYz_0001"}));
    CHECK_THROWS_AS(anon.anonymize(meta, 42, "humpback whale", Timestamp{"x"}), DuplicateCounterError);

    RawVideoMeta other = meta;
    other.platform_video_id = "Qw7-LmN0002";
    CHECK(anon.anonymize(meta, 1, "q", Timestamp{"t"}).record.local_id == "vid_0001");
    CHECK(anon.anonymize(other, 2, "q", Timestamp{"t"}).record.local_id == "vid_0002");
    CHECK(format_local_id(12345) == "vid_12345");
}

TEST_CASE("counter allocation is unique under concurrency") {
    Anonymizer anon({1, 2, 5});
    std::vector<std::thread> threads;
    std::vector<std::vector<long>> got(8);
    for (std::size_t t = 0; t < 8; ++t)
        threads.emplace_back([&, t] {
            for (int i = 0; i < 200; ++i) got[t].push_back(anon.next_counter());
        });
    for (auto& th : threads) th.join();
    std::set<long> all;
    for (const auto& g : got) all.insert(g.begin(), g.end());
    CHECK(all.size() == 1600);
    CHECK(*all.begin() == 6);
    RawVideoMeta meta{"id", "t", 1, Timestamp{"t"}, "c"};
    CHECK_NOTHROW(anon.anonymize(meta, 6, "q", Timestamp{"t"}));
    CHECK_THROWS_AS(anon.anonymize(meta, 6, "q", Timestamp{"t"}), DuplicateCounterError);
    CHECK_THROWS_AS(anon.anonymize(meta, 2, "q", Timestamp{"t"}), DuplicateCounterError);
}

TEST_CASE("local id parsing") {
    CHECK(parse_local_id("vid_0042") == 42);
    CHECK(parse_local_id("vid_12345") == 12345);
    CHECK_FALSE(parse_local_id("vid_042"));
    CHECK_FALSE(parse_local_id("vid_00042"));
    CHECK_FALSE(parse_local_id("vid_0000"));
    CHECK_FALSE(parse_local_id("xyz_0001"));
}

TEST_CASE("private map file") {
    TempDir dir;
    PrivateMap map;
    map.add({"vid_0001", "aB3xYz_0001"});
    map.add({"vid_0002", "Qw7-LmN0002"});
    CHECK_THROWS_AS(map.add(PrivateMapEntry{"vid_0001", "other"}), DuplicateIdError);
    CHECK(map.serialize() == "vid_0001\taB3xYz_0001\nvid_0002\tQw7-LmN0002\n");
    map.save(dir / "private_map.tsv");
    const PrivateMap back = PrivateMap::load(dir / "private_map.tsv");
    CHECK(back.entries() == map.entries());
    CHECK(back.platform_id("vid_0002") == std::optional<std::string>("Qw7-LmN0002"));
    CHECK(back.has_platform_id("aB3xYz_0001"));
    CHECK(PrivateMap::load(dir / "missing.tsv").entries().empty());
    std::ofstream(dir / "bad.tsv") << "vid_0001 no-tab\n";
    CHECK_THROWS_AS(PrivateMap::load(dir / "bad.tsv"), IoError);
}

TEST_CASE("serialized records built from fixtures contain no identifying text") {
    Harness h("paged");
    const auto metas = search_all(h.client, "humpback whale", 100, 2);
    Anonymizer anon;
    Manifest m;
    for (const auto& meta : metas) add_video(m, anon.anonymize(meta, anon.next_counter(), "humpback whale", Timestamp{"2024-06-01T00:00:00Z"}).record);
    const std::string text = serialize(m);
    for (const auto& meta : metas) {
        CHECK(text.find(meta.title) == std::string::npos);
        CHECK(text.find(meta.channel_ref) == std::string::npos);
        CHECK(text.find(meta.platform_video_id) == std::string::npos);
    }
    for (const char* uploader : {"Jo Harlow", "Priya", "Tomasz"}) CHECK(text.find(uploader) == std::string::npos);
}

TEST_CASE("fetch command contract") {
    TempDir dir;
    fetch_video("printf data > {output} # {url}", "abc", dir / "v" / "abc.mp4");
    CHECK(fs::file_size(dir / "v" / "abc.mp4") == 4);
    CHECK_THROWS_AS(fetch_video("touch {output}", "abc", dir / "empty.mp4"), FetchError);
    CHECK_THROWS_AS(fetch_video("true {video_id}", "abc", dir / "none.mp4"), FetchError);
    CHECK_THROWS_AS(fetch_video("exit 4", "abc", dir / "x.mp4"), FetchError);
    CHECK(watch_url("abc") == "https://www.youtube.com/watch?v=abc");
}

TEST_CASE("HTTP transport against a local server") {
    httplib::Server server;
    std::string seen_key, seen_q;
    server.Get("/youtube/v3/search", [&](const httplib::Request& req, httplib::Response& res) {
        seen_key = req.get_param_value("key");
        seen_q = req.get_param_value("q");
        res.set_content(read_file(kYoutube / "empty" / "search.json"), "application/json");
    });
    server.Get("/youtube/v3/videos", [&](const httplib::Request&, httplib::Response& res) {
        res.status = 403;
        res.set_header("Retry-After", "12");
        res.set_content(read_file(kYoutube / "quota" / "quota.json"), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    auto transport = make_http_transport("http://127.0.0.1:" + std::to_string(port));
    SteadyClock clock;
    TokenBucket bucket(100.0, 1.0, clock);
    YouTubeClient client(*transport, "secret key", bucket);
    const SearchPage page = client.search({"humpback whale", 10, std::nullopt});
    CHECK(page.items.empty());
    CHECK(seen_key == "secret key");
    CHECK(seen_q == "humpback whale");

    const HttpResponse r = transport->get("/youtube/v3/videos", {{"id", "x"}});
    CHECK(r.status == 403);
    CHECK(r.headers.at("retry-after") == "12");
    try {
        raise_api_error(r);
    } catch (const QuotaExceededError& e) {
        CHECK(e.retry_after_s == std::optional<double>(12.0));
    }
    server.stop();
    th.join();

    auto dead = make_http_transport("http://127.0.0.1:" + std::to_string(port), std::chrono::seconds(1));
    CHECK_THROWS_AS(dead->get("/youtube/v3/search", {}), NetworkFailureError);
}
