#include "whalesift/backbone.hpp"

#include <random>

#include "whalesift/rng.hpp"
#include "whalesift/tensor_io.hpp"

namespace whalesift::backbone {

namespace fs = std::filesystem;

namespace {

nn::Tensor he_normal(nn::Shape shape, std::int64_t fan_in, Rng& rng) {
    nn::Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    for (float& v : t.data) v = dist(rng);
    return t;
}

nn::Tensor small_positive(std::int64_t n, Rng& rng) {
    nn::Tensor t({n});
    std::uniform_real_distribution<float> dist(0.0f, 0.1f);
    for (float& v : t.data) v = dist(rng);
    return t;
}

/// HWC frame -> [1, 3, side, side]
nn::Tensor to_nchw(const frames::Frame& frame, std::int64_t side) {
    nn::Tensor t({1, 3, side, side});
    const std::int64_t plane = side * side;
    for (std::int64_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) t.data[static_cast<std::size_t>(c * plane + p)] = frame(p, c);
    return t;
}

}  // namespace

TinyBackbone::TinyBackbone(std::uint64_t seed, int input_side_px, frames::PixelScale scale) {
    if (input_side_px < kMinSide)
        throw BackboneShapeError("built-in backbone needs input side >= " + std::to_string(kMinSide));
    info_ = BackboneInfo{kTinyName, input_side_px, kTinyOutputDim, scale};
    Rng rng = make_rng(seed, "tiny-backbone");
    w1_ = he_normal({kTinyOutputDim, 3, 3, 3}, 3 * 9, rng);
    b1_ = small_positive(kTinyOutputDim, rng);
    w2_ = he_normal({kTinyOutputDim, kTinyOutputDim, 3, 3}, kTinyOutputDim * 9, rng);
    b2_ = small_positive(kTinyOutputDim, rng);
}

Eigen::VectorXf TinyBackbone::embed(const frames::Frame& frame) const {
    const std::int64_t side = info_.input_side_px;
    if (frame.rows() != side * side)
        throw BackboneShapeError("frame has " + std::to_string(frame.rows()) + " pixels, backbone expects " +
                                 std::to_string(side) + "x" + std::to_string(side));
    nn::Conv2dParams stride2;
    stride2.stride_h = stride2.stride_w = 2;
    nn::Tensor x = nn::conv2d(to_nchw(frame, side), w1_, &b1_, stride2);
    nn::relu_inplace(x);
    x = nn::conv2d(x, w2_, &b2_, stride2);
    nn::relu_inplace(x);
    const nn::Tensor pooled = nn::global_avg_pool(x);
    return Eigen::Map<const Eigen::VectorXf>(pooled.data.data(), kTinyOutputDim);
}

std::unique_ptr<Backbone> builtin_tiny_backbone(std::uint64_t seed, int input_side_px) {
    return std::make_unique<TinyBackbone>(seed, input_side_px);
}

std::unique_ptr<Backbone> load_backbone(const BackboneSpec& spec) {
    if (spec.model_path) {
        if (spec.seed) throw InvalidArgument("backbone spec sets both a model file and a built-in seed");
        return load_onnx_backbone(spec);
    }
    if (spec.output_dim != 0 && spec.output_dim != kTinyOutputDim)
        throw BackboneShapeError("built-in backbone produces " + std::to_string(kTinyOutputDim) + " features, spec asks for " +
                                 std::to_string(spec.output_dim));
    const int side = spec.input_side_px > 0 ? spec.input_side_px : frames::kDefaultSidePx;
    return std::make_unique<TinyBackbone>(spec.seed.value_or(kTinyDefaultSeed), side, spec.pixel_scale);
}

FeatureSequence extract(const Backbone& backbone, const frames::FrameSequence& seq) {
    const BackboneInfo& info = backbone.info();
    if (seq.side_px != info.input_side_px)
        throw BackboneShapeError("frames are " + std::to_string(seq.side_px) + " px, backbone '" + info.name + "' expects " +
                                 std::to_string(info.input_side_px));
    if (seq.frames.empty()) throw ShapeError("extract: no frames");
    FeatureSequence out;
    out.local_id = seq.local_id;
    out.features.resize(static_cast<Eigen::Index>(seq.frames.size()), info.output_dim);
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        const Eigen::VectorXf e = backbone.embed(seq.frames[t]);
        if (e.size() != info.output_dim) throw BackboneShapeError("backbone returned a wrongly sized embedding");
        if (!e.allFinite()) throw Error("backbone produced non-finite features for " + seq.local_id);
        out.features.row(static_cast<Eigen::Index>(t)) = e.transpose();
    }
    return out;
}

fs::path feature_stem(const fs::path& root, const std::string& backbone_name, const std::string& local_id) {
    return root / backbone_name / local_id;
}

void write_features(const fs::path& root, const std::string& backbone_name, const FeatureSequence& f) {
    TensorFile t;
    t.local_id = f.local_id;
    t.shape = {f.features.rows(), f.features.cols()};
    t.data.assign(f.features.data(), f.features.data() + f.features.size());
    t.extra["backbone"] = backbone_name;
    write_tensor(feature_stem(root, backbone_name, f.local_id), t);
}

FeatureSequence read_features(const fs::path& stem) {
    TensorFile t = read_tensor(stem);
    if (t.shape.size() != 2) throw ShapeError(stem.string() + ": feature tensor must be [T, D]");
    FeatureSequence f;
    f.local_id = t.local_id;
    f.features = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        t.data.data(), t.shape[0], t.shape[1]);
    if (!f.features.allFinite()) throw Error(stem.string() + ": non-finite feature values");
    return f;
}

bool features_cached(const fs::path& root, const std::string& backbone_name, const std::string& local_id) {
    const fs::path stem = feature_stem(root, backbone_name, local_id);
    return fs::exists(tensor_payload_path(stem)) && fs::exists(tensor_sidecar_path(stem));
}

}  // namespace whalesift::backbone
