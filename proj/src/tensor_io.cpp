#include "whalesift/tensor_io.hpp"

#include <bit>
#include <cstring>

#include "whalesift/corpus.hpp"
#include "whalesift/error.hpp"

namespace whalesift {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path tensor_payload_path(const fs::path& stem) {
    fs::path p = stem;
    p += ".f32";
    return p;
}

fs::path tensor_sidecar_path(const fs::path& stem) {
    fs::path p = stem;
    p += ".json";
    return p;
}

void append_f32_le(std::string& out, std::span<const float> values) {
    const std::size_t base = out.size();
    out.resize(base + values.size() * 4);
    char* dst = out.data() + base;
    for (float v : values) {
        auto bits = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) *dst++ = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
}

std::vector<float> decode_f32_le(std::string_view bytes) {
    if (bytes.size() % 4 != 0) throw IoError("float32 payload length is not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    const auto* src = reinterpret_cast<const unsigned char*>(bytes.data());
    for (std::size_t i = 0; i < out.size(); ++i, src += 4) {
        const std::uint32_t bits = std::uint32_t{src[0]} | (std::uint32_t{src[1]} << 8) | (std::uint32_t{src[2]} << 16) |
                                   (std::uint32_t{src[3]} << 24);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

void write_tensor(const fs::path& stem, const TensorFile& tensor) {
    std::int64_t count = 1;
    for (auto d : tensor.shape) count *= d;
    if (count != static_cast<std::int64_t>(tensor.data.size()))
        throw ShapeError("tensor shape does not match element count");
    std::string payload;
    append_f32_le(payload, tensor.data);
    json side = tensor.extra.is_object() ? tensor.extra : json::object();
    side["shape"] = tensor.shape;
    side["dtype"] = "float32";
    side["byte_order"] = "little";
    side["local_id"] = tensor.local_id;
    write_file_atomic(tensor_payload_path(stem), payload);
    write_file_atomic(tensor_sidecar_path(stem), side.dump(2) + "\n");
}

TensorFile read_tensor(const fs::path& stem) {
    json side;
    try {
        side = json::parse(read_file(tensor_sidecar_path(stem)));
    } catch (const json::exception& e) {
        throw IoError(tensor_sidecar_path(stem).string() + ": " + e.what());
    }
    if (side.value("dtype", "") != "float32") throw IoError(tensor_sidecar_path(stem).string() + ": dtype must be float32");
    TensorFile t;
    t.shape = side.at("shape").get<std::vector<std::int64_t>>();
    t.local_id = side.value("local_id", "");
    t.data = decode_f32_le(read_file(tensor_payload_path(stem)));
    std::int64_t count = 1;
    for (auto d : t.shape) count *= d;
    if (count != static_cast<std::int64_t>(t.data.size()))
        throw ShapeError(tensor_payload_path(stem).string() + ": payload size does not match sidecar shape");
    for (const char* key : {"shape", "dtype", "byte_order", "local_id"}) side.erase(key);
    t.extra = std::move(side);
    return t;
}

}  // namespace whalesift
