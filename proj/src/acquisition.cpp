#include "whalesift/acquisition.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "whalesift/command.hpp"
#include "whalesift/corpus.hpp"

namespace whalesift::acq {

namespace fs = std::filesystem;
using nlohmann::json;

void SearchRequest::check() const {
    if (query.empty()) throw InvalidArgument("search query must not be empty");
    if (max_results < 1 || max_results > kMaxPageSize)
        throw InvalidArgument("max_results must be in [1, " + std::to_string(kMaxPageSize) + "], got " +
                              std::to_string(max_results));
}

double parse_iso8601_duration(const std::string& text) {
    auto bad = [&]() { return MalformedResponseError("bad ISO 8601 duration '" + text + "'"); };
    if (text.size() < 3 || text[0] != 'P') throw bad();
    double total = 0.0;
    bool in_time = false, any = false;
    std::size_t i = 1;
    while (i < text.size()) {
        if (text[i] == 'T') {
            if (in_time) throw bad();
            in_time = true;
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && (std::isdigit(static_cast<unsigned char>(text[j])) || text[j] == '.')) ++j;
        if (j == i || j == text.size()) throw bad();
        double value = 0.0;
        const auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + j, value);
        if (ec != std::errc() || ptr != text.data() + j) throw bad();
        const char unit = text[j];
        if (!in_time && unit == 'W') total += value * 7 * 86400;
        else if (!in_time && unit == 'D') total += value * 86400;
        else if (in_time && unit == 'H') total += value * 3600;
        else if (in_time && unit == 'M') total += value * 60;
        else if (in_time && unit == 'S') total += value;
        else throw bad();
        any = true;
        i = j + 1;
    }
    if (!any) throw bad();
    return total;
}

// ---- fixture transport ----------------------------------------------------

FixtureTransport::FixtureTransport(fs::path dir) : dir_(std::move(dir)) {
    try {
        index_ = json::parse(read_file(dir_ / "index.json"));
    } catch (const json::exception& e) {
        throw InvalidArgument((dir_ / "index.json").string() + ": " + e.what());
    }
}

HttpResponse FixtureTransport::get(const std::string& path, const QueryParams& params) {
    const std::string endpoint = path.substr(path.find_last_of('/') + 1);
    const std::string key_param = endpoint == "videos" ? "id" : "pageToken";
    std::string key;
    for (const auto& [k, v] : params)
        if (k == key_param) key = v;
    const std::string route = endpoint + "?" + key;
    requests_.push_back(route);
    if (!index_.contains(route)) throw NetworkFailureError("no recorded response for " + route);
    const json& entry = index_[route];
    HttpResponse r;
    r.status = 200;
    std::string file;
    if (entry.is_string()) {
        file = entry.get<std::string>();
    } else {
        file = entry.at("file").get<std::string>();
        r.status = entry.value("status", 200);
        const json headers = entry.value("headers", json::object());
        for (const auto& [name, value] : headers.items()) r.headers[name] = value.get<std::string>();
    }
    r.body = read_file(dir_ / file);
    return r;
}

// ---- rate limiting --------------------------------------------------------

double SteadyClock::now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void SteadyClock::sleep_for(double seconds) {
    if (seconds > 0) std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

TokenBucket::TokenBucket(double rate_per_s, double burst, Clock& clock)
    : rate_(rate_per_s), burst_(burst), tokens_(burst), last_(clock.now_s()), clock_(clock) {
    if (!(rate_per_s > 0) || !std::isfinite(rate_per_s)) throw InvalidArgument("rate limit must be a positive number");
    if (!(burst >= 1)) throw InvalidArgument("token bucket burst must be >= 1");
}

void TokenBucket::acquire() {
    std::lock_guard lock(mutex_);
    const double now = clock_.now_s();
    tokens_ = std::min(burst_, tokens_ + (now - last_) * rate_);
    last_ = now;
    if (tokens_ < 1.0) {
        const double wait = (1.0 - tokens_) / rate_;
        clock_.sleep_for(wait);
        last_ = clock_.now_s();
        tokens_ = 1.0;
    }
    tokens_ -= 1.0;
}

void QuotaBudget::charge(long cost) {
    if (used + cost > daily_units)
        throw QuotaExceededError("local quota budget exhausted (" + std::to_string(used) + " of " +
                                     std::to_string(daily_units) + " units used)",
                                 std::nullopt);
    used += cost;
}

// ---- client ---------------------------------------------------------------

void raise_api_error(const HttpResponse& response) {
    std::string message = "HTTP " + std::to_string(response.status);
    std::vector<std::string> reasons;
    try {
        const json body = json::parse(response.body);
        if (body.contains("error")) {
            const json& err = body["error"];
            message += ": " + err.value("message", std::string{});
            for (const char* list : {"errors", "details"}) {
                const json entries = err.value(list, json::array());
                for (const auto& e : entries)
                    if (e.is_object()) reasons.push_back(e.value("reason", std::string{}));
            }
        }
    } catch (const json::exception&) {
        // non-JSON error bodies carry no reason codes
    }
    auto has = [&](std::initializer_list<const char*> names) {
        for (const auto& r : reasons)
            for (const char* n : names)
                if (r == n) return true;
        return false;
    };
    std::optional<double> retry_after;
    if (auto it = response.headers.find("retry-after"); it != response.headers.end()) {
        double v = 0;
        const auto& s = it->second;
        if (auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v); ec == std::errc() && p == s.data() + s.size())
            retry_after = v;
    }
    if (response.status == 429 || has({"quotaExceeded", "dailyLimitExceeded", "rateLimitExceeded", "userRateLimitExceeded"}))
        throw QuotaExceededError("quota exceeded (" + message + ")", retry_after);
    if (response.status == 401 || response.status == 403 || has({"keyInvalid", "keyExpired", "forbidden", "API_KEY_INVALID"}))
        throw AuthFailureError("authentication failed (" + message + ")");
    if (response.status >= 500) throw NetworkFailureError("server error (" + message + ")");
    throw AcquisitionError("request rejected (" + message + ")");
}

YouTubeClient::YouTubeClient(HttpTransport& transport, std::string api_key, TokenBucket& limiter, QuotaBudget* budget)
    : transport_(transport), api_key_(std::move(api_key)), limiter_(limiter), budget_(budget) {
    if (api_key_.empty()) throw AuthFailureError("no API key configured");
}

json YouTubeClient::call(const std::string& endpoint, const QueryParams& params, long cost) {
    if (budget_) budget_->charge(cost);
    limiter_.acquire();
    QueryParams full = params;
    full.emplace_back("key", api_key_);
    const HttpResponse r = transport_.get("/youtube/v3/" + endpoint, full);
    if (r.status != 200) raise_api_error(r);
    try {
        json body = json::parse(r.body);
        if (!body.is_object()) throw MalformedResponseError(endpoint + ": response is not a JSON object");
        return body;
    } catch (const json::exception& e) {
        throw MalformedResponseError(endpoint + ": " + e.what());
    }
}

namespace {

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) throw MalformedResponseError(where + ": missing '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw MalformedResponseError(where + ": '" + key + "' has the wrong type");
    }
}

}  // namespace

SearchPage YouTubeClient::search(const SearchRequest& request) {
    request.check();
    QueryParams params = {{"part", "snippet"},
                          {"type", "video"},
                          {"q", request.query},
                          {"maxResults", std::to_string(request.max_results)}};
    if (request.page_token) params.emplace_back("pageToken", *request.page_token);
    const json listing = call("search", params, kSearchCost);

    SearchPage page;
    if (listing.contains("nextPageToken")) {
        auto token = field<std::string>(listing, "nextPageToken", "search");
        if (!token.empty()) page.next_page_token = std::move(token);
    }
    const json items = listing.value("items", json::array());
    if (!items.is_array()) throw MalformedResponseError("search: 'items' is not an array");

    std::vector<std::string> ids;
    for (const auto& item : items) {
        const json& id = item.contains("id") ? item["id"] : json();
        if (id.is_object() && id.value("kind", std::string("youtube#video")) != "youtube#video") continue;
        ids.push_back(field<std::string>(id, "videoId", "search item"));
    }
    if (ids.size() > static_cast<std::size_t>(request.max_results))
        throw MalformedResponseError("search returned more items than requested");
    if (ids.empty()) return page;

    std::string joined;
    for (const auto& id : ids) joined += (joined.empty() ? "" : ",") + id;
    const json details = call("videos", {{"part", "snippet,contentDetails"}, {"id", joined}}, kVideosCost);
    const json detail_items = details.value("items", json::array());
    if (!detail_items.is_array()) throw MalformedResponseError("videos: 'items' is not an array");

    std::map<std::string, RawVideoMeta> by_id;
    for (const auto& item : detail_items) {
        RawVideoMeta m;
        m.platform_video_id = field<std::string>(item, "id", "videos item");
        if (m.platform_video_id.empty()) throw MalformedResponseError("videos item: empty id");
        const std::string where = "video " + m.platform_video_id;
        const json& snippet = item.contains("snippet") ? item["snippet"] : json();
        const json& content = item.contains("contentDetails") ? item["contentDetails"] : json();
        m.title = field<std::string>(snippet, "title", where);
        m.channel_ref = field<std::string>(snippet, "channelId", where);
        m.published_at = Timestamp{field<std::string>(snippet, "publishedAt", where)};
        m.duration_s = parse_iso8601_duration(field<std::string>(content, "duration", where));
        by_id[m.platform_video_id] = std::move(m);
    }
    for (const auto& id : ids)
        if (auto it = by_id.find(id); it != by_id.end()) page.items.push_back(it->second);
    return page;
}

std::vector<RawVideoMeta> search_all(YouTubeClient& client, const std::string& query, std::size_t limit, int page_size) {
    std::vector<RawVideoMeta> out;
    std::unordered_set<std::string> seen, tokens;
    SearchRequest req{query, page_size, std::nullopt};
    while (out.size() < limit) {
        SearchPage page = client.search(req);
        for (auto& m : page.items) {
            if (out.size() >= limit) break;
            if (seen.insert(m.platform_video_id).second) out.push_back(std::move(m));
        }
        if (!page.next_page_token) break;
        if (!tokens.insert(*page.next_page_token).second)
            throw MalformedResponseError("page token '" + *page.next_page_token + "' repeated");
        req.page_token = page.next_page_token;
    }
    return out;
}

// ---- anonymization --------------------------------------------------------

PrivateMap PrivateMap::load(const fs::path& path) {
    PrivateMap map;
    if (!fs::exists(path)) return map;
    std::istringstream in(read_file(path));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() || line.find('\t', tab + 1) != std::string::npos)
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected local_id<TAB>platform_id");
        map.add({line.substr(0, tab), line.substr(tab + 1)});
    }
    return map;
}

std::string PrivateMap::serialize() const {
    std::string out;
    for (const auto& e : entries_) out += e.local_id + "\t" + e.platform_video_id + "\n";
    return out;
}

void PrivateMap::save(const fs::path& path) const { write_file_atomic(path, serialize()); }

void PrivateMap::add(PrivateMapEntry entry) {
    if (platform_id(entry.local_id)) throw DuplicateIdError(entry.local_id);
    entries_.push_back(std::move(entry));
}

std::optional<std::string> PrivateMap::platform_id(const std::string& local_id) const {
    for (const auto& e : entries_)
        if (e.local_id == local_id) return e.platform_video_id;
    return std::nullopt;
}

bool PrivateMap::has_platform_id(const std::string& platform_video_id) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const PrivateMapEntry& e) { return e.platform_video_id == platform_video_id; });
}

std::optional<long> parse_local_id(const std::string& local_id) {
    if (local_id.size() < 8 || local_id.rfind("vid_", 0) != 0) return std::nullopt;
    long v = 0;
    const char* b = local_id.data() + 4;
    const char* e = local_id.data() + local_id.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e || v < 1) return std::nullopt;
    if (format_local_id(v) != local_id) return std::nullopt;
    return v;
}

Anonymizer::Anonymizer(std::set<long> used) : used_(std::move(used)) {}

long Anonymizer::next_counter() {
    std::lock_guard lock(mutex_);
    long next = 1;
    if (!used_.empty()) next = std::max(next, *used_.rbegin() + 1);
    if (!reserved_.empty()) next = std::max(next, *reserved_.rbegin() + 1);
    reserved_.insert(next);
    return next;
}

Anonymized Anonymizer::anonymize(const RawVideoMeta& meta, long counter, const std::string& query, const Timestamp& now) {
    if (meta.platform_video_id.empty()) throw InvalidArgument("video without a platform id");
    if (counter < 1) throw InvalidArgument("counter must be positive");
    {
        std::lock_guard lock(mutex_);
        if (!used_.insert(counter).second)
            throw DuplicateCounterError("counter " + std::to_string(counter) + " is already used in this corpus");
        reserved_.erase(counter);
    }
    Anonymized a;
    a.record.local_id = format_local_id(counter);
    a.record.duration_s = meta.duration_s;
    a.record.retrieved_at = now;
    a.record.query = query;
    a.mapping = {a.record.local_id, meta.platform_video_id};
    return a;
}

// ---- content fetch --------------------------------------------------------

void fetch_video(const std::string& command_template, const std::string& platform_video_id, const fs::path& output) {
    if (output.has_parent_path()) fs::create_directories(output.parent_path());
    const std::string cmd = expand_command(
        command_template, {{"video_id", platform_video_id}, {"url", watch_url(platform_video_id)}, {"output", output.string()}});
    const int status = run_command(cmd);
    if (status != 0) throw FetchError("fetch command failed (exit " + std::to_string(status) + ")");
    std::error_code ec;
    if (!fs::is_regular_file(output, ec) || fs::file_size(output, ec) == 0)
        throw FetchError("fetch command produced no content at " + output.string());
}

}  // namespace whalesift::acq
