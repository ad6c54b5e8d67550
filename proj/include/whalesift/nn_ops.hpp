#pragma once

// Dense float tensors and the inference kernels shared by the built-in
// backbone and the ONNX interpreter. Layout is NCHW, row-major.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "whalesift/error.hpp"

namespace whalesift::nn {

using Shape = std::vector<std::int64_t>;

std::int64_t element_count(const Shape& s);
std::string shape_string(const Shape& s);

struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(Shape s, float fill = 0.0f);
    Tensor(Shape s, std::vector<float> values);

    std::int64_t size() const noexcept { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const noexcept { return shape.size(); }
};

struct Conv2dParams {
    std::int64_t stride_h = 1, stride_w = 1;
    std::int64_t pad_top = 0, pad_left = 0, pad_bottom = 0, pad_right = 0;
    std::int64_t dilation_h = 1, dilation_w = 1;
    std::int64_t groups = 1;
};

/// x: [N, C, H, W], weight: [M, C/groups, kh, kw], bias: [M] or empty.
/// im2col followed by a single GEMM per group.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, const Conv2dParams& p);

struct Pool2dParams {
    std::int64_t kernel_h = 1, kernel_w = 1;
    std::int64_t stride_h = 1, stride_w = 1;
    std::int64_t pad_top = 0, pad_left = 0, pad_bottom = 0, pad_right = 0;
    bool count_include_pad = false;  // average pooling only
    bool ceil_mode = false;
};

Tensor max_pool2d(const Tensor& x, const Pool2dParams& p);
Tensor avg_pool2d(const Tensor& x, const Pool2dParams& p);

/// [N, C, H, W] -> [N, C, 1, 1]
Tensor global_avg_pool(const Tensor& x);

void relu_inplace(Tensor& x);

/// NumPy-style broadcast shape; throws ShapeError when incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

enum class BinaryOp { add, sub, mul, div };
Tensor binary(const Tensor& a, const Tensor& b, BinaryOp op);

/// Inference batch normalization over channel axis 1.
Tensor batch_norm(const Tensor& x, const Tensor& scale, const Tensor& bias, const Tensor& mean, const Tensor& var,
                  float epsilon);

Tensor transpose(const Tensor& x, const std::vector<std::int64_t>& perm);
Tensor concat(std::span<const Tensor* const> inputs, std::int64_t axis);

/// Mean over `axes` (negative axes allowed).
Tensor reduce_mean(const Tensor& x, std::vector<std::int64_t> axes, bool keepdims);

/// y = alpha * op(A) op(B) + beta * C with 2-D A and B.
Tensor gemm(const Tensor& a, const Tensor& b, const Tensor* c, float alpha, float beta, bool trans_a, bool trans_b);

}  // namespace whalesift::nn
