#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "../support/tempdir.hpp"
#include "whalesift/backbone.hpp"
#include "whalesift/nn_ops.hpp"

using namespace whalesift;
using namespace whalesift::backbone;
using whalesift::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kOnnxDir = fs::path(WHALESIFT_FIXTURE_DIR) / "onnx";

nn::Tensor random_tensor(nn::Shape shape, std::mt19937_64& rng) {
    nn::Tensor t(std::move(shape));
    std::normal_distribution<float> d(0.0f, 1.0f);
    for (float& v : t.data) v = d(rng);
    return t;
}

// Direct convolution with explicit loops.
nn::Tensor naive_conv(const nn::Tensor& x, const nn::Tensor& w, const nn::Tensor* b, const nn::Conv2dParams& p) {
    const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto M = w.dim(0), Cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    const auto OH = (H + p.pad_top + p.pad_bottom - (KH - 1) * p.dilation_h - 1) / p.stride_h + 1;
    const auto OW = (W + p.pad_left + p.pad_right - (KW - 1) * p.dilation_w - 1) / p.stride_w + 1;
    const auto Mg = M / p.groups;
    (void)C;
    nn::Tensor y({N, M, OH, OW});
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t m = 0; m < M; ++m)
            for (std::int64_t oy = 0; oy < OH; ++oy)
                for (std::int64_t ox = 0; ox < OW; ++ox) {
                    double acc = b ? b->data[static_cast<std::size_t>(m)] : 0.0;
                    const auto g = m / Mg;
                    for (std::int64_t c = 0; c < Cg; ++c)
                        for (std::int64_t ky = 0; ky < KH; ++ky)
                            for (std::int64_t kx = 0; kx < KW; ++kx) {
                                const auto iy = oy * p.stride_h - p.pad_top + ky * p.dilation_h;
                                const auto ix = ox * p.stride_w - p.pad_left + kx * p.dilation_w;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                const auto ci = g * Cg + c;
                                acc += static_cast<double>(x.data[static_cast<std::size_t>(((n * x.dim(1) + ci) * H + iy) * W + ix)]) *
                                       w.data[static_cast<std::size_t>(((m * Cg + c) * KH + ky) * KW + kx)];
                            }
                    y.data[static_cast<std::size_t>(((n * M + m) * OH + oy) * OW + ox)] = static_cast<float>(acc);
                }
    return y;
}

float max_abs_diff(const nn::Tensor& a, const nn::Tensor& b) {
    REQUIRE(a.shape == b.shape);
    float worst = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

// Mirrors probe_frame() in tests/fixtures/make_onnx_fixtures.py.
frames::Frame probe_frame(int side) {
    frames::Frame f(side * side, 3);
    for (int p = 0; p < side * side; ++p)
        for (int c = 0; c < 3; ++c) f(p, c) = static_cast<float>(0.9 * std::sin(0.37 * p + 1.3 * c));
    return f;
}

nlohmann::json expected_outputs() {
    std::ifstream in(kOnnxDir / "expected.json");
    return nlohmann::json::parse(in);
}

BackboneSpec onnx_spec(const std::string& file, int side, int dim) {
    BackboneSpec s;
    s.name = file;
    s.model_path = kOnnxDir / (file + ".onnx");
    s.input_side_px = side;
    s.output_dim = dim;
    return s;
}

}  // namespace

TEST_CASE("conv2d matches direct convolution") {
    std::mt19937_64 rng(11);
    struct Case {
        nn::Shape x, w;
        nn::Conv2dParams p;
    };
    nn::Conv2dParams strided;
    strided.stride_h = 2;
    strided.stride_w = 3;
    strided.pad_top = 1;
    strided.pad_left = 2;
    strided.pad_bottom = 0;
    strided.pad_right = 1;
    nn::Conv2dParams dilated;
    dilated.dilation_h = dilated.dilation_w = 2;
    dilated.pad_top = dilated.pad_left = dilated.pad_bottom = dilated.pad_right = 2;
    nn::Conv2dParams grouped;
    grouped.groups = 2;
    nn::Conv2dParams depthwise;
    depthwise.groups = 4;
    depthwise.pad_top = depthwise.pad_left = depthwise.pad_bottom = depthwise.pad_right = 1;
    const Case cases[] = {
        {{1, 3, 9, 9}, {4, 3, 3, 3}, {}},
        {{2, 3, 11, 10}, {5, 3, 3, 2}, strided},
        {{1, 2, 8, 8}, {3, 2, 3, 3}, dilated},
        {{1, 4, 6, 7}, {6, 2, 1, 3}, grouped},
        {{1, 4, 5, 5}, {4, 1, 3, 3}, depthwise},
    };
    for (const auto& c : cases) {
        const nn::Tensor x = random_tensor(c.x, rng);
        const nn::Tensor w = random_tensor(c.w, rng);
        const nn::Tensor b = random_tensor({c.w[0]}, rng);
        CHECK(max_abs_diff(nn::conv2d(x, w, &b, c.p), naive_conv(x, w, &b, c.p)) < 1e-4f);
        CHECK(max_abs_diff(nn::conv2d(x, w, nullptr, c.p), naive_conv(x, w, nullptr, c.p)) < 1e-4f);
    }
    CHECK_THROWS_AS(nn::conv2d(random_tensor({1, 3, 4, 4}, rng), random_tensor({2, 2, 3, 3}, rng), nullptr, {}), ShapeError);
}

TEST_CASE("pooling, broadcasting and reductions") {
    nn::Tensor x({1, 1, 4, 4});
    for (int i = 0; i < 16; ++i) x.data[static_cast<std::size_t>(i)] = static_cast<float>(i);
    nn::Pool2dParams p;
    p.kernel_h = p.kernel_w = 2;
    p.stride_h = p.stride_w = 2;
    CHECK(nn::max_pool2d(x, p).data == std::vector<float>{5, 7, 13, 15});
    CHECK(nn::avg_pool2d(x, p).data == std::vector<float>{2.5f, 4.5f, 10.5f, 12.5f});
    nn::Pool2dParams padded = p;
    padded.pad_bottom = padded.pad_right = 1;
    padded.kernel_h = padded.kernel_w = 3;
    const nn::Tensor excl = nn::avg_pool2d(x, padded);
    padded.count_include_pad = true;
    const nn::Tensor incl = nn::avg_pool2d(x, padded);
    CHECK(excl.data.back() == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
    CHECK(incl.data.back() == doctest::Approx((10 + 11 + 14 + 15) / 9.0));
    CHECK(nn::global_avg_pool(x).data == std::vector<float>{7.5f});

    CHECK(nn::broadcast_shape({2, 1, 3}, {4, 1}) == nn::Shape{2, 4, 3});
    CHECK_THROWS_AS(nn::broadcast_shape({2, 3}, {4}), ShapeError);
    const nn::Tensor row({1, 3}, std::vector<float>{1, 2, 3});
    const nn::Tensor col({2, 1}, std::vector<float>{10, 20});
    CHECK(nn::binary(row, col, nn::BinaryOp::add).data == std::vector<float>{11, 12, 13, 21, 22, 23});
    CHECK(nn::binary(col, row, nn::BinaryOp::sub).data == std::vector<float>{9, 8, 7, 19, 18, 17});

    const nn::Tensor m({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    CHECK(nn::reduce_mean(m, {1}, false).data == std::vector<float>{2, 5});
    CHECK(nn::reduce_mean(m, {-2}, true).shape == nn::Shape{1, 3});
    CHECK(nn::transpose(m, {1, 0}).data == std::vector<float>{1, 4, 2, 5, 3, 6});
    const nn::Tensor* parts[] = {&m, &m};
    CHECK(nn::concat(parts, 1).shape == nn::Shape{2, 6});
    const nn::Tensor y = nn::gemm(m, m, nullptr, 1.0f, 0.0f, false, true);
    CHECK(y.data == std::vector<float>{14, 32, 32, 77});
}

TEST_CASE("tiny backbone equals a hand-written conv stack") {
    const TinyBackbone bb(3, 9);
    const frames::Frame frame = probe_frame(9);
    nn::Tensor x({1, 3, 9, 9});
    for (int p = 0; p < 81; ++p)
        for (int c = 0; c < 3; ++c) x.data[static_cast<std::size_t>(c * 81 + p)] = frame(p, c);
    nn::Conv2dParams s2;
    s2.stride_h = s2.stride_w = 2;
    nn::Tensor h = naive_conv(x, bb.conv1_weight(), &bb.conv1_bias(), s2);
    for (float& v : h.data) v = std::max(v, 0.0f);
    h = naive_conv(h, bb.conv2_weight(), &bb.conv2_bias(), s2);
    REQUIRE(h.shape == nn::Shape{1, 8, 1, 1});
    const Eigen::VectorXf e = bb.embed(frame);
    REQUIRE(e.size() == kTinyOutputDim);
    for (int k = 0; k < 8; ++k) CHECK(e(k) == doctest::Approx(std::max(h.data[static_cast<std::size_t>(k)], 0.0f)).epsilon(1e-5));
}

TEST_CASE("tiny backbone is seeded and side-invariant on flat frames") {
    const TinyBackbone a(7), b(7), c(8);
    CHECK(a.conv1_weight().data == b.conv1_weight().data);
    CHECK(a.conv1_weight().data != c.conv1_weight().data);
    for (float v : a.conv1_bias().data) CHECK((v >= 0.0f && v <= 0.1f));
    const TinyBackbone small(7, 32);
    const Eigen::VectorXf big_e = a.embed(frames::Frame::Constant(224 * 224, 3, 0.3f));
    const Eigen::VectorXf small_e = small.embed(frames::Frame::Constant(32 * 32, 3, 0.3f));
    CHECK((big_e - small_e).cwiseAbs().maxCoeff() < 1e-5f);
    CHECK_THROWS_AS(a.embed(frames::Frame::Zero(100, 3)), BackboneShapeError);
    CHECK_THROWS_AS(TinyBackbone(1, 6), BackboneShapeError);
}

TEST_CASE("load_backbone dispatch and spec checks") {
    BackboneSpec builtin;
    builtin.seed = 5;
    auto bb = load_backbone(builtin);
    CHECK(bb->info().name == kTinyName);
    CHECK(bb->info().output_dim == 8);
    CHECK(bb->info().input_side_px == 224);
    builtin.output_dim = 2048;
    CHECK_THROWS_AS(load_backbone(builtin), BackboneShapeError);

    BackboneSpec both = onnx_spec("small_nchw", 16, 5);
    both.seed = 1;
    CHECK_THROWS_AS(load_backbone(both), InvalidArgument);
}

TEST_CASE("ONNX models reproduce the reference runtime") {
    const auto expected = expected_outputs();
    for (const auto& [name, entry] : expected.items()) {
        const int side = entry["side"];
        const auto want = entry["expected"].get<std::vector<float>>();
        // the symbolic model declares no input side, so it comes from the spec
        const auto model = load_backbone(onnx_spec(name, name == "symbolic" ? side : 0, 0));
        CHECK(model->info().input_side_px == side);
        CHECK(model->info().output_dim == static_cast<int>(want.size()));
        const Eigen::VectorXf got = model->embed(probe_frame(side));
        REQUIRE(got.size() == static_cast<Eigen::Index>(want.size()));
        double worst = 0;
        for (std::size_t k = 0; k < want.size(); ++k)
            worst = std::max(worst, std::abs(static_cast<double>(got(static_cast<Eigen::Index>(k))) - want[k]) /
                                        std::max(1.0, std::abs(static_cast<double>(want[k]))));
        INFO(name);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("a 224 px, 2048-wide model reports its own dimensions") {
    const auto bb = load_backbone(onnx_spec("nhwc_wide", 224, 2048));
    CHECK(bb->info().input_side_px == 224);
    CHECK(bb->info().output_dim == 2048);
    CHECK_THROWS_AS(load_backbone(onnx_spec("nhwc_wide", 224, 512)), BackboneShapeError);
    CHECK_THROWS_AS(load_backbone(onnx_spec("nhwc_wide", 299, 2048)), BackboneShapeError);
    CHECK_THROWS_AS(load_backbone(onnx_spec("small_nchw", 16, 8)), BackboneShapeError);
}

TEST_CASE("bad model files are rejected at load time") {
    CHECK_THROWS_AS(load_backbone(onnx_spec("unsupported", 8, 2)), UnsupportedOperatorError);
    CHECK_THROWS_AS(load_backbone(onnx_spec("does_not_exist", 8, 2)), ModelFileError);
    TempDir dir;
    std::ofstream(dir / "junk.onnx") << "this is not protobuf \xff\xff\xff";
    BackboneSpec junk;
    junk.model_path = dir / "junk.onnx";
    CHECK_THROWS_AS(load_backbone(junk), ModelFileError);
}

TEST_CASE("extract produces T x D and checks the frame side") {
    const TinyBackbone bb(7, 16);
    frames::FrameSequence seq;
    seq.local_id = "vid_0009";
    seq.side_px = 16;
    for (int t = 0; t < 31; ++t) seq.frames.push_back(frames::Frame::Constant(256, 3, -1.0f + 0.05f * static_cast<float>(t)));
    const FeatureSequence f = extract(bb, seq);
    CHECK(f.local_id == "vid_0009");
    CHECK(f.features.rows() == 31);
    CHECK(f.features.cols() == 8);
    CHECK(f.features.row(30).isApprox(bb.embed(seq.frames[30]).transpose()));

    seq.side_px = 32;
    CHECK_THROWS_AS(extract(bb, seq), BackboneShapeError);
    seq.side_px = 16;
    seq.frames.clear();
    CHECK_THROWS_AS(extract(bb, seq), ShapeError);
}

TEST_CASE("feature cache round trip") {
    TempDir dir;
    FeatureSequence f;
    f.local_id = "vid_0002";
    f.features.resize(3, 4);
    f.features << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12.5f;
    CHECK_FALSE(features_cached(dir.path(), "builtin-tiny", "vid_0002"));
    write_features(dir.path(), "builtin-tiny", f);
    CHECK(features_cached(dir.path(), "builtin-tiny", "vid_0002"));
    const FeatureSequence back = read_features(feature_stem(dir.path(), "builtin-tiny", "vid_0002"));
    CHECK(back.local_id == "vid_0002");
    CHECK(back.features == f.features);
}
