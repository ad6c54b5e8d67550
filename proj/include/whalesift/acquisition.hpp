#pragma once

// Candidate discovery through the YouTube Data API v3 and anonymization of
// what comes back.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "whalesift/error.hpp"
#include "whalesift/record.hpp"

namespace whalesift::acq {

// ---- errors ---------------------------------------------------------------

class AcquisitionError : public Error {
public:
    using Error::Error;
};

class QuotaExceededError : public AcquisitionError {
public:
    QuotaExceededError(const std::string& what, std::optional<double> retry_after_s)
        : AcquisitionError(what), retry_after_s(retry_after_s) {}
    std::optional<double> retry_after_s;
};

class AuthFailureError : public AcquisitionError {
public:
    using AcquisitionError::AcquisitionError;
};

class NetworkFailureError : public AcquisitionError {
public:
    using AcquisitionError::AcquisitionError;
};

class MalformedResponseError : public AcquisitionError {
public:
    using AcquisitionError::AcquisitionError;
};

class DuplicateCounterError : public AcquisitionError {
public:
    using AcquisitionError::AcquisitionError;
};

class FetchError : public AcquisitionError {
public:
    using AcquisitionError::AcquisitionError;
};

// ---- domain types ---------------------------------------------------------

inline constexpr int kMaxPageSize = 50;

struct SearchRequest {
    std::string query;
    int max_results = kMaxPageSize;
    std::optional<std::string> page_token;

    /// Throws InvalidArgument on an empty query or max_results outside [1, 50].
    void check() const;
};

struct RawVideoMeta {
    std::string platform_video_id;
    std::string title;
    double duration_s = 0.0;
    Timestamp published_at;
    std::string channel_ref;
};

struct SearchPage {
    std::vector<RawVideoMeta> items;
    std::optional<std::string> next_page_token;
};

/// "PT1H2M3.5S", "P1DT2H", "P0D" -> seconds. Years and months are rejected
/// because their length is ambiguous.
double parse_iso8601_duration(const std::string& text);

// ---- transport ------------------------------------------------------------

using QueryParams = std::vector<std::pair<std::string, std::string>>;

struct HttpResponse {
    int status = 0;
    std::string body;
    std::map<std::string, std::string> headers;  // lower-case names
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    /// Throws NetworkFailureError when no response arrives.
    virtual HttpResponse get(const std::string& path, const QueryParams& params) = 0;
};

/// HTTPS client for https://www.googleapis.com (or any base URL).
std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url = "https://www.googleapis.com",
                                                   std::chrono::seconds timeout = std::chrono::seconds(30));

/// Offline transport replaying recorded response bodies. `dir/index.json`
/// maps "<endpoint>?<key>" to a route, where endpoint is the last path
/// segment and key is the pageToken (search) or id list (videos):
///   {"search?": "search_1.json",
///    "search?TOKEN": {"status": 403, "file": "quota.json", "headers": {"retry-after": "30"}}}
class FixtureTransport final : public HttpTransport {
public:
    explicit FixtureTransport(std::filesystem::path dir);
    HttpResponse get(const std::string& path, const QueryParams& params) override;

    const std::vector<std::string>& requests() const noexcept { return requests_; }

private:
    std::filesystem::path dir_;
    nlohmann::json index_;
    std::vector<std::string> requests_;
};

// ---- rate limiting --------------------------------------------------------

class Clock {
public:
    virtual ~Clock() = default;
    virtual double now_s() = 0;
    virtual void sleep_for(double seconds) = 0;
};

class SteadyClock final : public Clock {
public:
    double now_s() override;
    void sleep_for(double seconds) override;
};

/// Time advances only through sleep_for.
class SimulatedClock final : public Clock {
public:
    double now_s() override { return now_; }
    void sleep_for(double seconds) override {
        if (seconds > 0) now_ += seconds;
    }
    void advance(double seconds) { sleep_for(seconds); }

private:
    double now_ = 0.0;
};

/// Classic token bucket. With burst 1, N acquisitions span at least
/// (N - 1) / rate seconds.
class TokenBucket {
public:
    TokenBucket(double rate_per_s, double burst, Clock& clock);
    void acquire();
    double rate() const noexcept { return rate_; }

private:
    double rate_, burst_, tokens_, last_;
    Clock& clock_;
    std::mutex mutex_;
};

/// Local mirror of the daily API quota (units).
struct QuotaBudget {
    long daily_units = 10000;
    long used = 0;

    /// Throws QuotaExceededError when `cost` would overrun the budget.
    void charge(long cost);
};

inline constexpr long kSearchCost = 100;
inline constexpr long kVideosCost = 1;

// ---- client ---------------------------------------------------------------

class YouTubeClient {
public:
    YouTubeClient(HttpTransport& transport, std::string api_key, TokenBucket& limiter, QuotaBudget* budget = nullptr);

    /// search.list then videos.list for the page's ids. Items keep search
    /// order; ids missing from the details response (deleted or private
    /// videos) are dropped.
    SearchPage search(const SearchRequest& request);

private:
    nlohmann::json call(const std::string& endpoint, const QueryParams& params, long cost);

    HttpTransport& transport_;
    std::string api_key_;
    TokenBucket& limiter_;
    QuotaBudget* budget_;
};

/// Maps an HTTP error response from the API onto the error taxonomy.
[[noreturn]] void raise_api_error(const HttpResponse& response);

/// Follows page tokens until exhausted or `limit` unique videos are
/// collected. Each platform id appears once, at its first position.
std::vector<RawVideoMeta> search_all(YouTubeClient& client, const std::string& query, std::size_t limit,
                                     int page_size = kMaxPageSize);

// ---- anonymization --------------------------------------------------------

struct PrivateMapEntry {
    std::string local_id;
    std::string platform_video_id;
    friend bool operator==(const PrivateMapEntry&, const PrivateMapEntry&) = default;
};

/// "local_id<TAB>platform_video_id" lines, kept apart from the manifest.
class PrivateMap {
public:
    static PrivateMap load(const std::filesystem::path& path);  // missing file -> empty
    void save(const std::filesystem::path& path) const;
    std::string serialize() const;

    void add(PrivateMapEntry entry);
    std::optional<std::string> platform_id(const std::string& local_id) const;
    bool has_platform_id(const std::string& platform_video_id) const;
    const std::vector<PrivateMapEntry>& entries() const noexcept { return entries_; }

private:
    std::vector<PrivateMapEntry> entries_;
};

struct Anonymized {
    AnonymizedRecord record;
    PrivateMapEntry mapping;
};

/// Thread-safe counter allocation. Counters already in use (from an
/// existing manifest) are passed in at construction.
class Anonymizer {
public:
    explicit Anonymizer(std::set<long> used = {});

    /// Reserves the smallest counter above every used or reserved one.
    long next_counter();
    /// Throws DuplicateCounterError when `counter` is taken.
    Anonymized anonymize(const RawVideoMeta& meta, long counter, const std::string& query, const Timestamp& now);

private:
    std::mutex mutex_;
    std::set<long> used_;
    std::set<long> reserved_;
};

/// Counter of a "vid_NNNN" id, or nullopt for anything else.
std::optional<long> parse_local_id(const std::string& local_id);

// ---- content fetch --------------------------------------------------------

inline std::string watch_url(const std::string& platform_video_id) {
    return "https://www.youtube.com/watch?v=" + platform_video_id;
}

/// Runs the user's fetch command with {video_id}, {url}, {output} filled in,
/// then checks that `output` exists and is non-empty.
void fetch_video(const std::string& command_template, const std::string& platform_video_id,
                 const std::filesystem::path& output);

}  // namespace whalesift::acq
