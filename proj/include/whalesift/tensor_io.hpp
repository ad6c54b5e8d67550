#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace whalesift {

/// Raw little-endian float32 payload (`<stem>.f32`, row-major) with a JSON
/// sidecar (`<stem>.json`) holding shape, dtype, and local_id.
struct TensorFile {
    std::vector<std::int64_t> shape;
    std::vector<float> data;
    std::string local_id;
    nlohmann::json extra = nlohmann::json::object();
};

std::filesystem::path tensor_payload_path(const std::filesystem::path& stem);
std::filesystem::path tensor_sidecar_path(const std::filesystem::path& stem);

/// Both files are written via temp-file + rename.
void write_tensor(const std::filesystem::path& stem, const TensorFile& tensor);
TensorFile read_tensor(const std::filesystem::path& stem);

/// Little-endian float32 encoding independent of host byte order.
void append_f32_le(std::string& out, std::span<const float> values);
std::vector<float> decode_f32_le(std::string_view bytes);

}  // namespace whalesift
