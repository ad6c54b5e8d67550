#pragma once

// Video interval -> exactly T standardized frames.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "whalesift/corpus.hpp"
#include "whalesift/error.hpp"

namespace whalesift::frames {

inline constexpr int kDefaultFrameCount = 31;
inline constexpr int kDefaultSidePx = 224;

struct SamplePolicy {
    int target_count = kDefaultFrameCount;
};

enum class PixelScale {
    symmetric_unit,  // [0, 255] -> [-1, 1]
    unit,            // [0, 255] -> [0, 1]
};

std::string_view to_string(PixelScale s) noexcept;
PixelScale parse_pixel_scale(std::string_view name);

struct PreprocessSpec {
    int side_px = kDefaultSidePx;
    PixelScale pixel_scale = PixelScale::symmetric_unit;
};

/// 8-bit interleaved RGB, row-major.
struct Image8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    static Image8 filled(int width, int height, std::uint8_t value);
    std::uint8_t& at(int x, int y, int channel) { return rgb[static_cast<std::size_t>((y * width + x) * 3 + channel)]; }
};

/// One normalized frame: side*side pixel rows (row-major raster order) by
/// three channels.
using Frame = Eigen::Array<float, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct FrameSequence {
    std::string local_id;
    int side_px = 0;
    std::vector<Frame> frames;
    std::int64_t native_count = 0;
};

class DecoderError : public Error {
public:
    using Error::Error;
};

class EmptyIntervalError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

// ---- sampling -------------------------------------------------------------

/// round(i (n-1) / (T-1)) for i = 0..T-1; {0} when T = 1. Requires n >= T >= 1.
std::vector<std::size_t> uniform_sample_indices(std::size_t n, std::size_t target);

/// With m = floor(n/2): indices 0..m-1, then m repeated (T - n + 1) times,
/// then m+1..n-1. Requires 1 <= n < T.
std::vector<std::size_t> pad_middle_indices(std::size_t n, std::size_t target);

/// Dispatches: n > T sample, n < T pad, n = T identity. n = 0 throws
/// EmptyInputError.
std::vector<std::size_t> standardize_indices(std::size_t n, std::size_t target);

template <typename T>
std::vector<T> gather(std::span<const T> items, const std::vector<std::size_t>& indices) {
    std::vector<T> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(items[i]);
    return out;
}

template <typename T>
std::vector<T> uniform_sample(std::span<const T> items, std::size_t target) {
    return gather(items, uniform_sample_indices(items.size(), target));
}

template <typename T>
std::vector<T> pad_middle(std::span<const T> items, std::size_t target) {
    return gather(items, pad_middle_indices(items.size(), target));
}

template <typename T>
std::vector<T> standardize(std::span<const T> items, const SamplePolicy& policy) {
    if (policy.target_count < 1) throw InvalidArgument("target frame count must be >= 1");
    return gather(items, standardize_indices(items.size(), static_cast<std::size_t>(policy.target_count)));
}

// ---- decoding -------------------------------------------------------------

struct FrameRef {
    std::filesystem::path path;
    double timestamp_s = 0.0;
};

struct DecodedInterval {
    std::vector<FrameRef> frames;  // presentation order
    std::int64_t native_count = 0;
};

/// Runs the decoder command template with {input}, {start}, {end}, and
/// {outdir} substituted. The decoder writes NNNNN.jpg frames into outdir
/// and optionally timestamps.txt (one time in seconds per frame); without
/// it, timestamps are spread evenly over the interval.
DecodedInterval enumerate_frames(const std::filesystem::path& video_file, const Interval& interval,
                                 const std::string& decoder_template, const std::filesystem::path& outdir);

/// Lists an already-decoded frame directory (the frame cache).
DecodedInterval list_decoded_frames(const std::filesystem::path& dir, const Interval& interval);

// ---- pixels ---------------------------------------------------------------

Image8 load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Image8& image);

/// Bilinear stretch to side_px x side_px (no aspect preservation), then
/// pixel scaling. symmetric_unit maps v to v / 127.5 - 1.
Frame resize_normalize(const Image8& raw, const PreprocessSpec& spec);

/// Standardizes the decoded frames to T, then loads and normalizes only the
/// selected files.
FrameSequence prepare_sequence(std::string local_id, std::span<const FrameRef> decoded, const SamplePolicy& policy,
                               const PreprocessSpec& spec);

/// Raw float32 tensor of shape [T, side, side, 3] plus JSON sidecar.
/// `extra` keys are added to the sidecar.
void write_frame_sequence(const std::filesystem::path& stem, const FrameSequence& seq,
                          const nlohmann::json& extra = nlohmann::json::object());
FrameSequence read_frame_sequence(const std::filesystem::path& stem);

}  // namespace whalesift::frames
