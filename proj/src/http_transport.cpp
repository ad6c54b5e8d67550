#include <httplib.h>

#include <algorithm>
#include <cctype>

#include "whalesift/acquisition.hpp"

namespace whalesift::acq {

namespace {

class HttplibTransport final : public HttpTransport {
public:
    HttplibTransport(const std::string& base_url, std::chrono::seconds timeout) : client_(base_url) {
        if (!client_.is_valid()) throw InvalidArgument("unusable API base URL '" + base_url + "'");
        client_.set_connection_timeout(timeout);
        client_.set_read_timeout(timeout);
        client_.set_follow_location(true);
    }

    HttpResponse get(const std::string& path, const QueryParams& params) override {
        httplib::Params p;
        for (const auto& [k, v] : params) p.emplace(k, v);
        const httplib::Result res = client_.Get(path, p, httplib::Headers{{"Accept", "application/json"}});
        if (!res) throw NetworkFailureError("request to " + path + " failed: " + httplib::to_string(res.error()));
        HttpResponse out;
        out.status = res->status;
        out.body = res->body;
        for (const auto& [name, value] : res->headers) {
            std::string lower = name;
            std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
            out.headers[lower] = value;
        }
        return out;
    }

private:
    httplib::Client client_;
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url, std::chrono::seconds timeout) {
    return std::make_unique<HttplibTransport>(base_url, timeout);
}

}  // namespace whalesift::acq
