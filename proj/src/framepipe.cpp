#include "whalesift/framepipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "whalesift/command.hpp"
#include "whalesift/tensor_io.hpp"

namespace whalesift::frames {

namespace fs = std::filesystem;

std::string_view to_string(PixelScale s) noexcept { return s == PixelScale::unit ? "unit" : "symmetric_unit"; }

PixelScale parse_pixel_scale(std::string_view name) {
    if (name == "symmetric_unit") return PixelScale::symmetric_unit;
    if (name == "unit") return PixelScale::unit;
    throw InvalidArgument("unknown pixel scale '" + std::string(name) + "'");
}

Image8 Image8::filled(int width, int height, std::uint8_t value) {
    Image8 img;
    img.width = width;
    img.height = height;
    img.rgb.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3, value);
    return img;
}

// ---- sampling -------------------------------------------------------------

std::vector<std::size_t> uniform_sample_indices(std::size_t n, std::size_t target) {
    if (target < 1) throw InvalidArgument("target frame count must be >= 1");
    if (n < target) throw InvalidArgument("uniform_sample needs at least " + std::to_string(target) + " frames, got " +
                                          std::to_string(n));
    if (target == 1) return {0};
    std::vector<std::size_t> idx(target);
    for (std::size_t i = 0; i < target; ++i) {
        const double pos = static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(target - 1);
        idx[i] = static_cast<std::size_t>(std::llround(pos));
    }
    return idx;
}

std::vector<std::size_t> pad_middle_indices(std::size_t n, std::size_t target) {
    if (n == 0) throw EmptyInputError("pad_middle: no frames to pad");
    if (n >= target) throw InvalidArgument("pad_middle needs fewer than " + std::to_string(target) + " frames");
    const std::size_t middle = n / 2;
    std::vector<std::size_t> idx;
    idx.reserve(target);
    for (std::size_t i = 0; i < middle; ++i) idx.push_back(i);
    idx.insert(idx.end(), target - n, middle);
    for (std::size_t i = middle; i < n; ++i) idx.push_back(i);
    return idx;
}

std::vector<std::size_t> standardize_indices(std::size_t n, std::size_t target) {
    if (target < 1) throw InvalidArgument("target frame count must be >= 1");
    if (n == 0) throw EmptyInputError("standardize: interval yielded no frames");
    if (n > target) return uniform_sample_indices(n, target);
    if (n < target) return pad_middle_indices(n, target);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

// ---- decoding -------------------------------------------------------------

namespace {

std::vector<fs::path> jpeg_files(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto& p = entry.path();
        if (entry.is_regular_file() && p.extension() == ".jpg") out.push_back(p);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string seconds_text(double s) {
    std::ostringstream ss;
    ss.precision(6);
    ss << std::fixed << s;
    return ss.str();
}

}  // namespace

DecodedInterval list_decoded_frames(const fs::path& dir, const Interval& interval) {
    const auto files = jpeg_files(dir);
    DecodedInterval out;
    out.native_count = static_cast<std::int64_t>(files.size());
    std::vector<double> stamps;
    const fs::path stamp_file = dir / "timestamps.txt";
    if (fs::exists(stamp_file)) {
        std::ifstream in(stamp_file);
        double t;
        while (in >> t) stamps.push_back(t);
        if (stamps.size() != files.size())
            throw DecoderError("decoder wrote " + std::to_string(files.size()) + " frames but " +
                               std::to_string(stamps.size()) + " timestamps");
    } else {
        const double step = files.empty() ? 0.0 : interval.length() / static_cast<double>(files.size());
        for (std::size_t i = 0; i < files.size(); ++i) stamps.push_back(interval.start_s + step * static_cast<double>(i));
    }
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (i > 0 && !(stamps[i] > stamps[i - 1])) throw DecoderError("decoder timestamps are not strictly increasing");
        out.frames.push_back({files[i], stamps[i]});
    }
    return out;
}

DecodedInterval enumerate_frames(const fs::path& video_file, const Interval& interval, const std::string& decoder_template,
                                 const fs::path& outdir) {
    if (!(interval.end_s > interval.start_s))
        throw EmptyIntervalError("empty interval [" + seconds_text(interval.start_s) + ", " + seconds_text(interval.end_s) + "]");
    if (!fs::is_regular_file(video_file)) throw DecoderError("video file not found: " + video_file.string());

    fs::create_directories(outdir);
    for (const auto& old : jpeg_files(outdir)) fs::remove(old);
    fs::remove(outdir / "timestamps.txt");

    const std::string cmd = expand_command(decoder_template, {{"input", video_file.string()},
                                                              {"start", seconds_text(interval.start_s)},
                                                              {"end", seconds_text(interval.end_s)},
                                                              {"outdir", outdir.string()}});
    const int status = run_command(cmd);
    if (status != 0)
        throw DecoderError("decoder failed (exit " + std::to_string(status) + ") on " + video_file.string());
    return list_decoded_frames(outdir, interval);
}

// ---- pixels ---------------------------------------------------------------

Image8 load_image(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw IoError("cannot decode image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    Image8 img;
    img.width = rgb.cols;
    img.height = rgb.rows;
    img.rgb.resize(static_cast<std::size_t>(rgb.total()) * 3);
    for (int y = 0; y < rgb.rows; ++y)
        std::copy_n(rgb.ptr<std::uint8_t>(y), rgb.cols * 3, img.rgb.data() + static_cast<std::size_t>(y) * rgb.cols * 3);
    return img;
}

void save_image(const fs::path& path, const Image8& image) {
    cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.rgb.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

Frame resize_normalize(const Image8& raw, const PreprocessSpec& spec) {
    if (raw.width <= 0 || raw.height <= 0) throw InvalidArgument("resize_normalize: zero-dimension frame");
    if (raw.rgb.size() != static_cast<std::size_t>(raw.width) * static_cast<std::size_t>(raw.height) * 3)
        throw ShapeError("resize_normalize: expected 3 interleaved 8-bit channels");
    if (spec.side_px <= 0) throw InvalidArgument("resize_normalize: side_px must be positive");

    const cv::Mat src8(raw.height, raw.width, CV_8UC3, const_cast<std::uint8_t*>(raw.rgb.data()));
    cv::Mat src;
    src8.convertTo(src, CV_32FC3);
    const int side = spec.side_px;
    Frame out(static_cast<Eigen::Index>(side) * side, 3);
    cv::Mat dst(side, side, CV_32FC3, out.data());  // writes straight into `out`
    cv::resize(src, dst, cv::Size(side, side), 0.0, 0.0, cv::INTER_LINEAR);
    if (dst.data != reinterpret_cast<uchar*>(out.data())) throw ShapeError("resize_normalize: unexpected reallocation");

    if (spec.pixel_scale == PixelScale::symmetric_unit) out = out / 127.5f - 1.0f;
    else out = out / 255.0f;
    return out;
}

FrameSequence prepare_sequence(std::string local_id, std::span<const FrameRef> decoded, const SamplePolicy& policy,
                               const PreprocessSpec& spec) {
    const auto selected = standardize(decoded, policy);
    FrameSequence seq;
    seq.local_id = std::move(local_id);
    seq.side_px = spec.side_px;
    seq.native_count = static_cast<std::int64_t>(decoded.size());
    seq.frames.reserve(selected.size());
    for (const auto& ref : selected) seq.frames.push_back(resize_normalize(load_image(ref.path), spec));
    return seq;
}

void write_frame_sequence(const fs::path& stem, const FrameSequence& seq, const nlohmann::json& extra) {
    TensorFile t;
    if (extra.is_object()) t.extra = extra;
    t.local_id = seq.local_id;
    const auto side = static_cast<std::int64_t>(seq.side_px);
    t.shape = {static_cast<std::int64_t>(seq.frames.size()), side, side, 3};
    t.data.reserve(static_cast<std::size_t>(seq.frames.size() * side * side * 3));
    for (const Frame& f : seq.frames) {
        if (f.rows() != side * side) throw ShapeError("frame size does not match side_px");
        t.data.insert(t.data.end(), f.data(), f.data() + f.size());
    }
    t.extra["native_count"] = seq.native_count;
    write_tensor(stem, t);
}

FrameSequence read_frame_sequence(const fs::path& stem) {
    TensorFile t = read_tensor(stem);
    if (t.shape.size() != 4 || t.shape[1] != t.shape[2] || t.shape[3] != 3)
        throw ShapeError(stem.string() + ": expected a [T, side, side, 3] frame tensor");
    FrameSequence seq;
    seq.local_id = t.local_id;
    seq.side_px = static_cast<int>(t.shape[1]);
    seq.native_count = t.extra.value("native_count", std::int64_t{0});
    const Eigen::Index pixels = t.shape[1] * t.shape[2];
    for (std::int64_t i = 0; i < t.shape[0]; ++i)
        seq.frames.push_back(Eigen::Map<const Frame>(t.data.data() + i * pixels * 3, pixels, 3));
    return seq;
}

}  // namespace whalesift::frames
