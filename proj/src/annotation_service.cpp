#include "whalesift/annotation_service.hpp"

#include <httplib.h>

#include <charconv>
#include <mutex>
#include <shared_mutex>

namespace whalesift::annot {

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<std::string> validate_interval(Label label, const Interval& interval) {
    if (label == Label::irrelevant) return "irrelevant intervals are machine-assigned";
    return interval_violation(label, interval);
}

namespace {

json interval_json(const std::optional<Interval>& iv) {
    if (!iv) return nullptr;
    return {{"start_s", iv->start_s}, {"end_s", iv->end_s}, {"truncated", iv->truncated}};
}

std::optional<FrameIndex> strip_index(const fs::path& root, const std::string& id) {
    if (root.empty() || !fs::exists(frame_dir(root, id) / "index.json")) return std::nullopt;
    return load_frame_index(root, id);
}

bool matches(const LabeledVideo& v, const std::string& status) {
    if (status == "all") return true;
    if (status == "unlabeled") return !v.label;
    if (status == "labeled") return v.label.has_value();
    if (status == "relevant") return v.label == Label::relevant;
    if (status == "irrelevant") return v.label == Label::irrelevant;
    throw InvalidArgument("unknown status '" + status + "'");
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, json extra = json::object()) {
    extra["error"] = message;
    send_json(res, status, extra);
}

}  // namespace

json task_json(const LabeledVideo& v, const fs::path& strips_root, bool with_frames) {
    json t = {{"local_id", v.id()},
              {"duration_s", v.record.duration_s},
              {"label", v.label ? json(std::string(to_string(*v.label))) : json(nullptr)},
              {"interval", interval_json(v.interval)},
              {"version", v.version}};
    const auto strip = strip_index(strips_root, v.id());
    t["frame_count"] = strip ? strip->timestamps_s.size() : 0;
    if (with_frames) {
        json frames = json::array();
        if (strip)
            for (std::size_t n = 0; n < strip->timestamps_s.size(); ++n)
                frames.push_back({{"n", n},
                                  {"timestamp_s", strip->timestamps_s[n]},
                                  {"url", "/api/videos/" + v.id() + "/frames/" + std::to_string(n) + ".jpg"}});
        t["frames"] = std::move(frames);
    }
    return t;
}

struct AnnotationService::Impl {
    ServiceConfig config;
    FileLock lock;
    Manifest manifest;
    std::shared_mutex mutex;  // readers share; writes are serialized
    httplib::Server server;
    int bound_port = -1;

    explicit Impl(ServiceConfig c) : config(std::move(c)), lock(config.manifest_path), manifest(load(config.manifest_path)) {
        routes();
    }

    /// Parses {"version": N, ...}; returns nullopt after sending 400.
    static std::optional<json> body_of(const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            send_error(res, 400, "request body is not valid JSON");
            return std::nullopt;
        }
        if (!body.is_object() || !body.contains("version") || !body["version"].is_number_integer()) {
            send_error(res, 400, "body must be an object with an integer 'version'");
            return std::nullopt;
        }
        return body;
    }

    /// Applies `mutate` to a copy, persists it, then publishes it. The write
    /// reaches disk before the client sees 200.
    template <typename F>
    void write(const httplib::Request& req, httplib::Response& res, F mutate) {
        const std::string id = req.path_params.at("id");
        auto body = body_of(req, res);
        if (!body) return;
        std::unique_lock guard(mutex);
        const LabeledVideo* current = manifest.find(id);
        if (!current) return send_error(res, 404, "unknown video '" + id + "'");
        const std::int64_t version = (*body)["version"].get<std::int64_t>();
        if (version != current->version)
            return send_error(res, 409, "version conflict", {{"current_version", current->version}});
        Manifest next = manifest;
        if (auto problem = mutate(next, id, *body)) return send_error(res, 422, *problem);
        try {
            save(next, config.manifest_path);
        } catch (const std::exception& e) {
            return send_error(res, 500, std::string("could not persist: ") + e.what());
        }
        manifest = std::move(next);
        send_json(res, 200, task_json(manifest.at(id), config.strips_root, false));
    }

    void routes() {
        server.Get("/api/videos", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string status = req.has_param("status") ? req.get_param_value("status") : "all";
            std::shared_lock guard(mutex);
            json out = json::array();
            try {
                for (const auto& v : manifest.videos)
                    if (matches(v, status)) out.push_back(task_json(v, config.strips_root, false));
            } catch (const InvalidArgument& e) {
                return send_error(res, 400, e.what());
            }
            send_json(res, 200, {{"videos", out}});
        });

        server.Get("/api/videos/:id", [this](const httplib::Request& req, httplib::Response& res) {
            std::shared_lock guard(mutex);
            const LabeledVideo* v = manifest.find(req.path_params.at("id"));
            if (!v) return send_error(res, 404, "unknown video '" + req.path_params.at("id") + "'");
            send_json(res, 200, task_json(*v, config.strips_root, true));
        });

        server.Get("/api/videos/:id/frames/:file", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.path_params.at("id");
            const std::string file = req.path_params.at("file");
            {
                std::shared_lock guard(mutex);
                if (!manifest.find(id)) return send_error(res, 404, "unknown video '" + id + "'");
            }
            long long n = -1;
            const auto dot = file.find(".jpg");
            if (dot == std::string::npos || dot + 4 != file.size()) return send_error(res, 404, "no such frame");
            auto [p, ec] = std::from_chars(file.data(), file.data() + dot, n);
            if (ec != std::errc() || p != file.data() + dot || n < 0) return send_error(res, 404, "no such frame");
            const fs::path path = frame_path(config.strips_root, id, n);
            if (config.strips_root.empty() || !fs::is_regular_file(path)) return send_error(res, 404, "no such frame");
            res.set_content(read_file(path), "image/jpeg");
        });

        server.Post("/api/videos/:id/label", [this](const httplib::Request& req, httplib::Response& res) {
            write(req, res, [](Manifest& m, const std::string& id, const json& body) -> std::optional<std::string> {
                if (!body.contains("label") || !body["label"].is_string()) return "missing 'label'";
                try {
                    upsert_label(m, id, parse_label(body["label"].get<std::string>()));
                } catch (const InvalidArgument& e) {
                    return e.what();
                }
                return std::nullopt;
            });
        });

        server.Post("/api/videos/:id/interval", [this](const httplib::Request& req, httplib::Response& res) {
            write(req, res, [](Manifest& m, const std::string& id, const json& body) -> std::optional<std::string> {
                if (!body.contains("start_s") || !body.contains("end_s") || !body["start_s"].is_number() ||
                    !body["end_s"].is_number())
                    return "interval needs numeric 'start_s' and 'end_s'";
                const LabeledVideo& v = m.at(id);
                if (!v.label) return "label the video before marking an interval";
                const Interval iv{body["start_s"].get<double>(), body["end_s"].get<double>(), false};
                if (auto why = validate_interval(*v.label, iv)) return why;
                try {
                    set_interval(m, id, iv);
                } catch (const IntervalError& e) {
                    return e.what();
                }
                return std::nullopt;
            });
        });

        server.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
            std::shared_lock guard(mutex);
            const ClassCounts c = class_counts(manifest);
            send_json(res, 200,
                      {{"irrelevant", c.irrelevant}, {"relevant", c.relevant}, {"unlabeled", c.unlabeled}, {"total", c.total()}});
        });

        if (config.ui_dir && !server.set_mount_point("/", config.ui_dir->string()))
            throw InvalidArgument("UI directory not found: " + config.ui_dir->string());
    }
};

AnnotationService::AnnotationService(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

AnnotationService::~AnnotationService() { stop(); }

int AnnotationService::bind() {
    const auto& c = impl_->config;
    int port = c.port == 0 ? impl_->server.bind_to_any_port(c.host) : (impl_->server.bind_to_port(c.host, c.port) ? c.port : -1);
    if (port < 0) throw BindError("cannot bind " + c.host + ":" + std::to_string(c.port));
    impl_->bound_port = port;
    return port;
}

void AnnotationService::run() {
    if (impl_->bound_port < 0) bind();
    impl_->server.listen_after_bind();
}

void AnnotationService::stop() {
    if (impl_) impl_->server.stop();
}

void AnnotationService::wait_until_ready() { impl_->server.wait_until_ready(); }

}  // namespace whalesift::annot
