#include "whalesift/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_set>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

namespace whalesift {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Label l) noexcept {
    return l == Label::relevant ? "relevant" : "irrelevant";
}

Label parse_label(std::string_view text) {
    if (text == "relevant" || text == "1") return Label::relevant;
    if (text == "irrelevant" || text == "0") return Label::irrelevant;
    throw InvalidArgument("unknown label '" + std::string(text) + "'");
}

UnknownIdError::UnknownIdError(std::string_view id) : Error("unknown video id '" + std::string(id) + "'") {}
DuplicateIdError::DuplicateIdError(std::string_view id) : Error("duplicate video id '" + std::string(id) + "'") {}

LabeledVideo* Manifest::find(std::string_view local_id) {
    auto it = std::find_if(videos.begin(), videos.end(), [&](const LabeledVideo& v) { return v.id() == local_id; });
    return it == videos.end() ? nullptr : &*it;
}

const LabeledVideo* Manifest::find(std::string_view local_id) const {
    return const_cast<Manifest*>(this)->find(local_id);
}

LabeledVideo& Manifest::at(std::string_view local_id) {
    if (auto* v = find(local_id)) return *v;
    throw UnknownIdError(local_id);
}

const LabeledVideo& Manifest::at(std::string_view local_id) const {
    return const_cast<Manifest*>(this)->at(local_id);
}

void add_video(Manifest& m, AnonymizedRecord record) {
    if (m.find(record.local_id)) throw DuplicateIdError(record.local_id);
    LabeledVideo v;
    v.record = std::move(record);
    m.videos.push_back(std::move(v));
}

void upsert_label(Manifest& m, std::string_view local_id, Label label) {
    LabeledVideo& v = m.at(local_id);
    if (v.label && *v.label != label) v.interval.reset();
    v.label = label;
    ++v.version;
}

std::optional<std::string> interval_violation(Label label, const Interval& iv) {
    if (!(iv.start_s >= 0.0) || !(iv.end_s > iv.start_s)) return "interval must satisfy 0 <= start < end";
    const double len = iv.length();
    if (label == Label::relevant) {
        if (len < kRelevantMinSeconds) return "below 10 s";
        if (len > kRelevantMaxSeconds) return "above 20 s";
        return std::nullopt;
    }
    if (iv.truncated) return std::nullopt;
    if (std::abs(len - kIrrelevantSeconds) > 1e-9) return "irrelevant interval must be exactly 15 s";
    return std::nullopt;
}

void set_interval(Manifest& m, std::string_view local_id, const Interval& interval) {
    LabeledVideo& v = m.at(local_id);
    if (!v.label) throw IntervalError("video '" + std::string(local_id) + "' has no label yet");
    if (auto why = interval_violation(*v.label, interval)) throw IntervalError(*why);
    if (v.record.duration_s > 0.0 && interval.end_s > v.record.duration_s + 1e-9)
        throw IntervalError("interval ends after the video");
    v.interval = interval;
    ++v.version;
}

void set_frame_count(Manifest& m, std::string_view local_id, std::int64_t native_count) {
    LabeledVideo& v = m.at(local_id);
    v.frame_count = native_count;
    ++v.version;
}

Interval assign_irrelevant_interval(double duration_s, std::uint64_t seed) {
    if (!(duration_s > 0.0)) throw InvalidArgument("duration must be positive");
    if (duration_s <= kIrrelevantSeconds) {
        return Interval{0.0, duration_s, duration_s < kIrrelevantSeconds};
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> start(0.0, duration_s - kIrrelevantSeconds);
    const double s = start(rng);
    return Interval{s, s + kIrrelevantSeconds, false};
}

ClassCounts class_counts(const Manifest& m) {
    ClassCounts c;
    for (const auto& v : m.videos) {
        if (!v.label) ++c.unlabeled;
        else if (*v.label == Label::relevant) ++c.relevant;
        else ++c.irrelevant;
    }
    return c;
}

// ---- serialization --------------------------------------------------------

namespace {

json to_json(const LabeledVideo& v) {
    json j;
    j["local_id"] = v.record.local_id;
    j["duration_s"] = v.record.duration_s;
    j["retrieved_at"] = v.record.retrieved_at.iso8601;
    j["query"] = v.record.query;
    j["label"] = v.label ? json(std::string(to_string(*v.label))) : json(nullptr);
    if (v.interval) {
        json iv{{"start_s", v.interval->start_s}, {"end_s", v.interval->end_s}};
        if (v.interval->truncated) iv["truncated"] = true;
        j["interval"] = iv;
    } else {
        j["interval"] = nullptr;
    }
    j["frame_count"] = v.frame_count ? json(*v.frame_count) : json(nullptr);
    j["version"] = v.version;
    return j;
}

LabeledVideo video_from_json(const json& j) {
    LabeledVideo v;
    v.record.local_id = j.at("local_id").get<std::string>();
    v.record.duration_s = j.at("duration_s").get<double>();
    v.record.retrieved_at.iso8601 = j.value("retrieved_at", "");
    v.record.query = j.value("query", "");
    if (j.contains("label") && !j["label"].is_null()) v.label = parse_label(j["label"].get<std::string>());
    if (j.contains("interval") && !j["interval"].is_null()) {
        const auto& iv = j["interval"];
        v.interval = Interval{iv.at("start_s").get<double>(), iv.at("end_s").get<double>(),
                              iv.value("truncated", false)};
    }
    if (j.contains("frame_count") && !j["frame_count"].is_null()) v.frame_count = j["frame_count"].get<std::int64_t>();
    v.version = j.value("version", std::int64_t{0});
    return v;
}

}  // namespace

std::string serialize(const Manifest& m) {
    std::string out = json{{"schema_version", m.schema_version}}.dump();
    out += '\n';
    for (const auto& v : m.videos) {
        out += to_json(v).dump();
        out += '\n';
    }
    return out;
}

Manifest parse_manifest(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    Manifest m;
    bool header = false;
    std::unordered_set<std::string> seen;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!header) {
            const int version = j.value("schema_version", -1);
            if (version != kManifestSchemaVersion)
                throw SchemaVersionError("manifest schema_version " + std::to_string(version) + " (expected " +
                                         std::to_string(kManifestSchemaVersion) + ")");
            m.schema_version = version;
            header = true;
            continue;
        }
        try {
            LabeledVideo v = video_from_json(j);
            if (!seen.insert(v.id()).second) throw DuplicateIdError(v.id());
            m.videos.push_back(std::move(v));
        } catch (const json::exception& e) {
            throw IoError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!header) throw IoError("manifest has no header line");
    return m;
}

void save(const Manifest& m, const fs::path& path) { write_file_atomic(path, serialize(m)); }

Manifest load(const fs::path& path) { return parse_manifest(read_file(path)); }

void write_file_atomic(const fs::path& path, std::string_view contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot rename onto " + path.string() + ": " + ec.message());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

FileLock::FileLock(const fs::path& target) {
    fs::path lock = target;
    lock += ".lock";
    if (lock.has_parent_path()) fs::create_directories(lock.parent_path());
    fd_ = ::open(lock.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open lock file " + lock.string() + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw LockHeldError("corpus is locked by another process (" + lock.string() + ")");
    }
}

FileLock::~FileLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

// ---- frame cache ----------------------------------------------------------

fs::path frame_dir(const fs::path& frames_root, std::string_view local_id) { return frames_root / std::string(local_id); }

std::string frame_file_name(std::int64_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05lld.jpg", static_cast<long long>(n));
    return buf;
}

fs::path frame_path(const fs::path& frames_root, std::string_view local_id, std::int64_t n) {
    return frame_dir(frames_root, local_id) / frame_file_name(n);
}

void save_frame_index(const fs::path& frames_root, const FrameIndex& index) {
    json j;
    j["local_id"] = index.local_id;
    j["interval"] = {{"start_s", index.interval.start_s}, {"end_s", index.interval.end_s}};
    if (index.interval.truncated) j["interval"]["truncated"] = true;
    j["native_count"] = index.native_count;
    j["timestamps_s"] = index.timestamps_s;
    write_file_atomic(frame_dir(frames_root, index.local_id) / "index.json", j.dump(2) + "\n");
}

FrameIndex load_frame_index(const fs::path& frames_root, std::string_view local_id) {
    const json j = json::parse(read_file(frame_dir(frames_root, local_id) / "index.json"));
    FrameIndex index;
    index.local_id = j.at("local_id").get<std::string>();
    const auto& iv = j.at("interval");
    index.interval = Interval{iv.at("start_s").get<double>(), iv.at("end_s").get<double>(), iv.value("truncated", false)};
    index.native_count = j.at("native_count").get<std::int64_t>();
    index.timestamps_s = j.at("timestamps_s").get<std::vector<double>>();
    return index;
}

}  // namespace whalesift
