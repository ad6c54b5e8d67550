#pragma once

// REST backend for human labeling. Serves manifest entries and preview frame
// strips, and writes labels and relevant intervals back to the manifest.
//
//   GET  /api/videos?status=all|unlabeled|labeled|relevant|irrelevant
//   GET  /api/videos/{id}
//   GET  /api/videos/{id}/frames/{n}.jpg
//   POST /api/videos/{id}/label     {"label": "relevant", "version": 3}
//   POST /api/videos/{id}/interval  {"start_s": 2.0, "end_s": 14.5, "version": 4}
//   GET  /api/progress
//
// Errors: 400 malformed body, 404 unknown id or frame, 409 stale version,
// 422 rule violation. Every error body is {"error": "...", ...}.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "whalesift/corpus.hpp"

namespace whalesift::annot {

struct ServiceConfig {
    std::filesystem::path manifest_path;
    /// Preview strips: <strips_root>/<local_id>/NNNNN.jpg + index.json.
    std::filesystem::path strips_root;
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::optional<std::filesystem::path> ui_dir;  // static files mounted at /
};

/// Server-side interval rule: relevant spans must last 10-20 s; irrelevant
/// spans are never accepted from a client because the system assigns them.
std::optional<std::string> validate_interval(Label label, const Interval& interval);

nlohmann::json task_json(const LabeledVideo& v, const std::filesystem::path& strips_root, bool with_frames);

class BindError : public Error {
public:
    using Error::Error;
};

class AnnotationService {
public:
    /// Takes the corpus lock and loads the manifest; throws LockHeldError
    /// when another writer owns the corpus.
    explicit AnnotationService(ServiceConfig config);
    ~AnnotationService();
    AnnotationService(const AnnotationService&) = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    /// Binds the listening socket and returns the port; throws BindError.
    int bind();
    /// Blocks serving requests until stop().
    void run();
    void stop();
    void wait_until_ready();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace whalesift::annot
