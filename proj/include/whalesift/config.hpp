#pragma once

// Pipeline configuration: one JSON file, relative paths resolved against the
// file's directory, command-line flags applied on top.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "whalesift/backbone.hpp"
#include "whalesift/error.hpp"
#include "whalesift/framepipe.hpp"
#include "whalesift/seqclassifier.hpp"

namespace whalesift::cli {

/// Missing or ill-typed configuration; the message names the key.
class ConfigError : public Error {
public:
    using Error::Error;
};

inline constexpr const char* kDefaultApiKeyEnv = "WHALESIFT_YOUTUBE_API_KEY";

struct PathsConfig {
    std::filesystem::path corpus;  // manifest.ndjson, private_map.tsv
    std::optional<std::filesystem::path> videos, frames, strips, features, checkpoints, reports;
};

struct AcquisitionConfig {
    std::optional<std::string> query;
    int page_size = 50;
    long limit = 500;
    double rate_per_s = 1.0;
    long daily_units = 10000;
    std::string api_key_env = kDefaultApiKeyEnv;
    std::optional<std::string> api_key;
    std::string base_url = "https://www.googleapis.com";
    std::optional<std::string> fetch_command;  // {video_id} {url} {output}
    std::string video_extension = "mp4";
};

struct ServiceSection {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<std::filesystem::path> ui_dir;
};

struct PipelineConfig {
    std::filesystem::path base_dir;
    std::uint64_t seed = 0;
    PathsConfig paths;
    AcquisitionConfig acquisition;
    frames::SamplePolicy sample;
    frames::PreprocessSpec preprocess;
    backbone::BackboneSpec backbone;
    bool backbone_name_set = false;
    std::optional<std::string> decoder_command;  // {input} {start} {end} {outdir}
    int strip_frames = 48;
    seq::TrainConfig train;
    seq::NetworkShape shape;
    int folds = 5;
    int threads = 1;
    ServiceSection service;

    /// Feature-space name: backbone.name if given, else the model file stem,
    /// else the built-in backbone's name.
    std::string feature_space() const;

    /// Value of an optional path, or ConfigError naming `paths.<key>`.
    const std::filesystem::path& need_path(const std::optional<std::filesystem::path>& p, const char* key) const;

    std::filesystem::path manifest_path() const { return paths.corpus / "manifest.ndjson"; }
    std::filesystem::path private_map_path() const { return paths.corpus / "private_map.tsv"; }
};

PipelineConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);

/// "builtin" selects the built-in backbone; anything else is a model path.
void set_backbone(PipelineConfig& cfg, const std::string& value);

/// Checks invariants that hold for every subcommand (T >= 1, k >= 2, ...).
void validate(const PipelineConfig& cfg);

}  // namespace whalesift::cli
