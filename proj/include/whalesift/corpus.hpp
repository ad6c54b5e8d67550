#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "whalesift/error.hpp"
#include "whalesift/record.hpp"

namespace whalesift {

/// Class index 0 is irrelevant and 1 is relevant everywhere in the system.
enum class Label : int { irrelevant = 0, relevant = 1 };

inline constexpr int kNumClasses = 2;

constexpr int class_index(Label l) noexcept { return static_cast<int>(l); }
std::string_view to_string(Label l) noexcept;
Label parse_label(std::string_view text);

// Occurrence-interval length rules.
inline constexpr double kRelevantMinSeconds = 10.0;
inline constexpr double kRelevantMaxSeconds = 20.0;
inline constexpr double kIrrelevantSeconds = 15.0;

struct Interval {
    double start_s = 0.0;
    double end_s = 0.0;
    /// Set when the video is shorter than the irrelevant window and the whole
    /// video was used instead.
    bool truncated = false;

    double length() const noexcept { return end_s - start_s; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

struct LabeledVideo {
    AnonymizedRecord record;
    std::optional<Label> label;
    std::optional<Interval> interval;
    std::optional<std::int64_t> frame_count;
    std::int64_t version = 0;

    const std::string& id() const noexcept { return record.local_id; }
    friend bool operator==(const LabeledVideo&, const LabeledVideo&) = default;
};

inline constexpr int kManifestSchemaVersion = 1;

struct Manifest {
    int schema_version = kManifestSchemaVersion;
    std::vector<LabeledVideo> videos;

    LabeledVideo* find(std::string_view local_id);
    const LabeledVideo* find(std::string_view local_id) const;
    LabeledVideo& at(std::string_view local_id);
    const LabeledVideo& at(std::string_view local_id) const;

    friend bool operator==(const Manifest&, const Manifest&) = default;
};

class UnknownIdError : public Error {
public:
    explicit UnknownIdError(std::string_view id);
};

class DuplicateIdError : public Error {
public:
    explicit DuplicateIdError(std::string_view id);
};

class SchemaVersionError : public Error {
public:
    using Error::Error;
};

class IntervalError : public Error {
public:
    using Error::Error;
};

/// Appends a fresh unlabeled entry; throws DuplicateIdError on collision.
void add_video(Manifest& m, AnonymizedRecord record);

/// Sets the label and bumps the version. Any label change clears a stored
/// interval: relevant intervals are human-marked and irrelevant ones are
/// machine-assigned, so neither survives a flip.
void upsert_label(Manifest& m, std::string_view local_id, Label label);

/// Stores an interval after checking it against the video's label.
void set_interval(Manifest& m, std::string_view local_id, const Interval& interval);

void set_frame_count(Manifest& m, std::string_view local_id, std::int64_t native_count);

/// Checks the length rule for `label`. Returns a violation message, or
/// nullopt when the interval is acceptable for that class.
std::optional<std::string> interval_violation(Label label, const Interval& interval);

/// Random 15 s window with start uniform over [0, duration - 15]. Videos
/// shorter than 15 s get the whole video, flagged `truncated`.
Interval assign_irrelevant_interval(double duration_s, std::uint64_t seed);

struct ClassCounts {
    std::size_t irrelevant = 0;
    std::size_t relevant = 0;
    std::size_t unlabeled = 0;

    std::size_t total() const noexcept { return irrelevant + relevant + unlabeled; }
    friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

ClassCounts class_counts(const Manifest& m);

// Manifest file: newline-delimited JSON. First line is the header
// {"schema_version": N}; each following line is one LabeledVideo.
void save(const Manifest& m, const std::filesystem::path& path);
Manifest load(const std::filesystem::path& path);
std::string serialize(const Manifest& m);
Manifest parse_manifest(std::string_view text);

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Exclusive advisory lock (flock) on `<target>.lock`, held for the lifetime
/// of the object. Throws LockHeldError when another process holds it.
class FileLock {
public:
    explicit FileLock(const std::filesystem::path& target);
    ~FileLock();
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

class LockHeldError : public Error {
public:
    using Error::Error;
};

// Frame cache: <frames_root>/<local_id>/NNNNN.jpg plus index.json.
struct FrameIndex {
    std::string local_id;
    Interval interval;
    std::int64_t native_count = 0;
    std::vector<double> timestamps_s;

    friend bool operator==(const FrameIndex&, const FrameIndex&) = default;
};

std::filesystem::path frame_dir(const std::filesystem::path& frames_root, std::string_view local_id);
std::filesystem::path frame_path(const std::filesystem::path& frames_root, std::string_view local_id,
                                 std::int64_t n);
std::string frame_file_name(std::int64_t n);
void save_frame_index(const std::filesystem::path& frames_root, const FrameIndex& index);
FrameIndex load_frame_index(const std::filesystem::path& frames_root, std::string_view local_id);

}  // namespace whalesift
