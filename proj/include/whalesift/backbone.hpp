#pragma once

// Frozen per-frame feature extractors: a pretrained ONNX model, or a tiny
// seeded convolution stack for desk-scale runs.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "whalesift/error.hpp"
#include "whalesift/framepipe.hpp"
#include "whalesift/nn_ops.hpp"

namespace whalesift::backbone {

inline constexpr int kTinyOutputDim = 8;
inline constexpr std::uint64_t kTinyDefaultSeed = 7;
inline constexpr const char* kTinyName = "builtin-tiny";

struct BackboneSpec {
    std::string name = kTinyName;
    int input_side_px = frames::kDefaultSidePx;
    int output_dim = kTinyOutputDim;
    frames::PixelScale pixel_scale = frames::PixelScale::symmetric_unit;
    std::optional<std::filesystem::path> model_path;  // absent selects the built-in backbone
    std::optional<std::uint64_t> seed;                // built-in only
};

struct BackboneInfo {
    std::string name;
    int input_side_px = 0;
    int output_dim = 0;
    frames::PixelScale pixel_scale = frames::PixelScale::symmetric_unit;
};

/// Read-only after construction; embed() may be called concurrently.
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual const BackboneInfo& info() const noexcept = 0;
    /// One normalized side x side frame -> D-dimensional embedding.
    virtual Eigen::VectorXf embed(const frames::Frame& frame) const = 0;
};

class ModelFileError : public Error {
public:
    using Error::Error;
};

class UnsupportedOperatorError : public Error {
public:
    using Error::Error;
};

class BackboneShapeError : public ShapeError {
public:
    using ShapeError::ShapeError;
};

/// Two valid-padded 3x3 stride-2 convolutions with ReLU (3 -> 8 -> 8
/// channels) and global average pooling. Valid padding keeps a spatially
/// constant frame constant through the stack, so its embedding does not
/// depend on side_px.
class TinyBackbone final : public Backbone {
public:
    explicit TinyBackbone(std::uint64_t seed, int input_side_px = frames::kDefaultSidePx,
                          frames::PixelScale scale = frames::PixelScale::symmetric_unit);

    const BackboneInfo& info() const noexcept override { return info_; }
    Eigen::VectorXf embed(const frames::Frame& frame) const override;

    const nn::Tensor& conv1_weight() const noexcept { return w1_; }
    const nn::Tensor& conv1_bias() const noexcept { return b1_; }
    const nn::Tensor& conv2_weight() const noexcept { return w2_; }
    const nn::Tensor& conv2_bias() const noexcept { return b2_; }

    static constexpr int kMinSide = 7;

private:
    BackboneInfo info_;
    nn::Tensor w1_, b1_, w2_, b2_;
};

std::unique_ptr<Backbone> builtin_tiny_backbone(std::uint64_t seed, int input_side_px = frames::kDefaultSidePx);

/// Opens an ONNX model and checks the spec against the model's declared
/// input side and output width; throws ModelFileError, BackboneShapeError,
/// or UnsupportedOperatorError.
std::unique_ptr<Backbone> load_onnx_backbone(const BackboneSpec& spec);

/// model_path present -> ONNX, otherwise the built-in backbone.
std::unique_ptr<Backbone> load_backbone(const BackboneSpec& spec);

/// Row-major T x D embeddings of one video.
struct FeatureSequence {
    std::string local_id;
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> features;
};

FeatureSequence extract(const Backbone& backbone, const frames::FrameSequence& frames);

/// Feature cache: <root>/<backbone>/<local_id>.f32 + .json, shape [T, D].
std::filesystem::path feature_stem(const std::filesystem::path& root, const std::string& backbone_name,
                                   const std::string& local_id);
void write_features(const std::filesystem::path& root, const std::string& backbone_name, const FeatureSequence& f);
FeatureSequence read_features(const std::filesystem::path& stem);
bool features_cached(const std::filesystem::path& root, const std::string& backbone_name, const std::string& local_id);

}  // namespace whalesift::backbone
