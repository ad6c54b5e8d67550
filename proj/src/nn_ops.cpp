#include "whalesift/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Core>

namespace whalesift::nn {

namespace {

using RowMajorMap = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require_rank4(const Tensor& x, const char* op) {
    if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected a 4-D NCHW tensor, got " + shape_string(x.shape));
}

std::vector<std::int64_t> strides_of(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

std::int64_t pooled_extent(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad_a, std::int64_t pad_b,
                           std::int64_t dilation, bool ceil_mode) {
    const std::int64_t span = dilation * (k - 1) + 1;
    const std::int64_t room = in + pad_a + pad_b - span;
    if (room < 0) throw ShapeError("window larger than padded input");
    std::int64_t out = ceil_mode ? (room + stride - 1) / stride + 1 : room / stride + 1;
    // A ceil-mode window must start inside the input or the leading pad.
    if (ceil_mode && (out - 1) * stride >= in + pad_a) --out;
    return out;
}

}  // namespace

std::int64_t element_count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape s, float fill) : shape(std::move(s)), data(static_cast<std::size_t>(element_count(shape)), fill) {}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
    if (element_count(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("tensor data does not match shape " + shape_string(shape));
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, const Conv2dParams& p) {
    require_rank4(x, "conv2d");
    if (weight.rank() != 4) throw ShapeError("conv2d: weight must be 4-D");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t m = weight.dim(0), cg = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    const std::int64_t g = p.groups;
    if (g < 1 || c % g != 0 || m % g != 0 || c / g != cg)
        throw ShapeError("conv2d: channel/group mismatch (input " + shape_string(x.shape) + ", weight " +
                         shape_string(weight.shape) + ", groups " + std::to_string(g) + ")");
    if (bias && bias->size() != m) throw ShapeError("conv2d: bias length must equal output channels");

    const std::int64_t oh = pooled_extent(h, kh, p.stride_h, p.pad_top, p.pad_bottom, p.dilation_h, false);
    const std::int64_t ow = pooled_extent(w, kw, p.stride_w, p.pad_left, p.pad_right, p.dilation_w, false);
    const std::int64_t mg = m / g, patch = cg * kh * kw, positions = oh * ow;

    Tensor y({n, m, oh, ow});
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols(patch, positions);
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t grp = 0; grp < g; ++grp) {
            const float* src = x.data.data() + (b * c + grp * cg) * h * w;
            for (std::int64_t ci = 0; ci < cg; ++ci)
                for (std::int64_t ky = 0; ky < kh; ++ky)
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        float* row = cols.data() + ((ci * kh + ky) * kw + kx) * positions;
                        for (std::int64_t oy = 0; oy < oh; ++oy) {
                            const std::int64_t iy = oy * p.stride_h - p.pad_top + ky * p.dilation_h;
                            for (std::int64_t ox = 0; ox < ow; ++ox) {
                                const std::int64_t ix = ox * p.stride_w - p.pad_left + kx * p.dilation_w;
                                row[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? src[(ci * h + iy) * w + ix] : 0.0f;
                            }
                        }
                    }
            ConstRowMajorMap wmat(weight.data.data() + grp * mg * patch, mg, patch);
            RowMajorMap out(y.data.data() + (b * m + grp * mg) * positions, mg, positions);
            out.noalias() = wmat * cols;
            if (bias)
                for (std::int64_t k = 0; k < mg; ++k) out.row(k).array() += bias->data[static_cast<std::size_t>(grp * mg + k)];
        }
    }
    return y;
}

namespace {

template <bool IsMax>
Tensor pool2d(const Tensor& x, const Pool2dParams& p, const char* name) {
    require_rank4(x, name);
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t oh = pooled_extent(h, p.kernel_h, p.stride_h, p.pad_top, p.pad_bottom, 1, p.ceil_mode);
    const std::int64_t ow = pooled_extent(w, p.kernel_w, p.stride_w, p.pad_left, p.pad_right, 1, p.ceil_mode);
    Tensor y({n, c, oh, ow});
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
        const float* src = x.data.data() + plane * h * w;
        float* dst = y.data.data() + plane * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            const std::int64_t y0 = oy * p.stride_h - p.pad_top;
            const std::int64_t y1 = std::min(y0 + p.kernel_h, h + p.pad_bottom);
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                const std::int64_t x0 = ox * p.stride_w - p.pad_left;
                const std::int64_t x1 = std::min(x0 + p.kernel_w, w + p.pad_right);
                float acc = IsMax ? -std::numeric_limits<float>::infinity() : 0.0f;
                std::int64_t valid = 0;
                for (std::int64_t iy = std::max<std::int64_t>(y0, 0); iy < std::min(y1, h); ++iy)
                    for (std::int64_t ix = std::max<std::int64_t>(x0, 0); ix < std::min(x1, w); ++ix) {
                        const float v = src[iy * w + ix];
                        if constexpr (IsMax) acc = std::max(acc, v);
                        else acc += v;
                        ++valid;
                    }
                if constexpr (IsMax) {
                    dst[oy * ow + ox] = acc;
                } else {
                    const std::int64_t count = p.count_include_pad ? (y1 - y0) * (x1 - x0) : valid;
                    dst[oy * ow + ox] = count > 0 ? acc / static_cast<float>(count) : 0.0f;
                }
            }
        }
    }
    return y;
}

}  // namespace

Tensor max_pool2d(const Tensor& x, const Pool2dParams& p) { return pool2d<true>(x, p, "max_pool2d"); }
Tensor avg_pool2d(const Tensor& x, const Pool2dParams& p) { return pool2d<false>(x, p, "avg_pool2d"); }

Tensor global_avg_pool(const Tensor& x) {
    require_rank4(x, "global_avg_pool");
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor y({n, c, 1, 1});
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
        const Eigen::Map<const Eigen::ArrayXf> v(x.data.data() + plane * hw, hw);
        y.data[static_cast<std::size_t>(plane)] = v.mean();
    }
    return y;
}

void relu_inplace(Tensor& x) {
    Eigen::Map<Eigen::ArrayXf> v(x.data.data(), x.size());
    v = v.max(0.0f);
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
        out[i] = da == 1 ? db : da;
    }
    return out;
}

Tensor binary(const Tensor& a, const Tensor& b, BinaryOp op) {
    auto apply = [op](float u, float v) {
        switch (op) {
            case BinaryOp::add: return u + v;
            case BinaryOp::sub: return u - v;
            case BinaryOp::mul: return u * v;
            case BinaryOp::div: return u / v;
        }
        return 0.0f;
    };
    const Shape out_shape = broadcast_shape(a.shape, b.shape);
    Tensor y(out_shape);
    if (a.shape == b.shape) {
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = apply(a.data[i], b.data[i]);
        return y;
    }
    const std::size_t r = out_shape.size();
    auto padded_strides = [&](const Shape& s) {
        Shape full(r, 1);
        std::copy(s.begin(), s.end(), full.begin() + static_cast<std::ptrdiff_t>(r - s.size()));
        auto st = strides_of(full);
        for (std::size_t i = 0; i < r; ++i)
            if (full[i] == 1) st[i] = 0;
        return st;
    };
    const auto sa = padded_strides(a.shape), sb = padded_strides(b.shape);
    std::vector<std::int64_t> idx(r, 0);
    for (std::size_t flat = 0; flat < y.data.size(); ++flat) {
        std::int64_t oa = 0, ob = 0;
        for (std::size_t d = 0; d < r; ++d) {
            oa += idx[d] * sa[d];
            ob += idx[d] * sb[d];
        }
        y.data[flat] = apply(a.data[static_cast<std::size_t>(oa)], b.data[static_cast<std::size_t>(ob)]);
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    return y;
}

Tensor batch_norm(const Tensor& x, const Tensor& scale, const Tensor& bias, const Tensor& mean, const Tensor& var,
                  float epsilon) {
    if (x.rank() < 2) throw ShapeError("batch_norm: input needs a channel axis");
    const std::int64_t n = x.dim(0), c = x.dim(1), inner = x.size() / std::max<std::int64_t>(n * c, 1);
    for (const Tensor* t : {&scale, &bias, &mean, &var})
        if (t->size() != c) throw ShapeError("batch_norm: per-channel parameter length mismatch");
    Tensor y = x;
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const auto k = static_cast<std::size_t>(ch);
            const float s = scale.data[k] / std::sqrt(var.data[k] + epsilon);
            const float shift = bias.data[k] - mean.data[k] * s;
            Eigen::Map<Eigen::ArrayXf> v(y.data.data() + (b * c + ch) * inner, inner);
            v = v * s + shift;
        }
    return y;
}

Tensor transpose(const Tensor& x, const std::vector<std::int64_t>& perm) {
    const std::size_t r = x.rank();
    if (perm.size() != r) throw ShapeError("transpose: permutation rank mismatch");
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape.at(static_cast<std::size_t>(perm[i]));
    const auto in_strides = strides_of(x.shape);
    Tensor y(out_shape);
    std::vector<std::int64_t> idx(r, 0);
    for (std::size_t flat = 0; flat < y.data.size(); ++flat) {
        std::int64_t off = 0;
        for (std::size_t d = 0; d < r; ++d) off += idx[d] * in_strides[static_cast<std::size_t>(perm[d])];
        y.data[flat] = x.data[static_cast<std::size_t>(off)];
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    return y;
}

Tensor concat(std::span<const Tensor* const> inputs, std::int64_t axis) {
    if (inputs.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = inputs.front()->shape;
    const auto r = static_cast<std::int64_t>(first.size());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    Shape out_shape = first;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const Tensor* t : inputs) {
        if (t->rank() != first.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < first.size(); ++d)
            if (d != static_cast<std::size_t>(axis) && t->shape[d] != first[d])
                throw ShapeError("concat: shape mismatch " + shape_string(t->shape) + " vs " + shape_string(first));
        out_shape[static_cast<std::size_t>(axis)] += t->shape[static_cast<std::size_t>(axis)];
    }
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t d = 0; d < axis; ++d) outer *= first[static_cast<std::size_t>(d)];
    for (std::int64_t d = axis + 1; d < r; ++d) inner *= first[static_cast<std::size_t>(d)];
    Tensor y(out_shape);
    float* dst = y.data.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (const Tensor* t : inputs) {
            const std::int64_t block = t->shape[static_cast<std::size_t>(axis)] * inner;
            dst = std::copy_n(t->data.data() + o * block, block, dst);
        }
    return y;
}

Tensor reduce_mean(const Tensor& x, std::vector<std::int64_t> axes, bool keepdims) {
    const auto r = static_cast<std::int64_t>(x.rank());
    if (axes.empty()) {
        axes.resize(static_cast<std::size_t>(r));
        std::iota(axes.begin(), axes.end(), 0);
    }
    std::vector<bool> reduced(static_cast<std::size_t>(r), false);
    for (auto a : axes) {
        if (a < 0) a += r;
        if (a < 0 || a >= r) throw ShapeError("reduce_mean: axis out of range");
        reduced[static_cast<std::size_t>(a)] = true;
    }
    Shape kept_shape(static_cast<std::size_t>(r));
    std::int64_t count = 1;
    for (std::int64_t d = 0; d < r; ++d) {
        const auto k = static_cast<std::size_t>(d);
        kept_shape[k] = reduced[k] ? 1 : x.shape[k];
        if (reduced[k]) count *= x.shape[k];
    }
    Tensor y(kept_shape);
    const auto out_strides = strides_of(kept_shape);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    for (std::size_t flat = 0; flat < x.data.size(); ++flat) {
        std::int64_t off = 0;
        for (std::size_t d = 0; d < idx.size(); ++d)
            if (!reduced[d]) off += idx[d] * out_strides[d];
        y.data[static_cast<std::size_t>(off)] += x.data[flat];
        for (std::size_t d = idx.size(); d-- > 0;) {
            if (++idx[d] < x.shape[d]) break;
            idx[d] = 0;
        }
    }
    for (float& v : y.data) v /= static_cast<float>(count);
    if (!keepdims) {
        Shape squeezed;
        for (std::size_t d = 0; d < kept_shape.size(); ++d)
            if (!reduced[d]) squeezed.push_back(kept_shape[d]);
        y.shape = squeezed;
    }
    return y;
}

Tensor gemm(const Tensor& a, const Tensor& b, const Tensor* c, float alpha, float beta, bool trans_a, bool trans_b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("gemm: operands must be 2-D");
    ConstRowMajorMap ma(a.data.data(), a.dim(0), a.dim(1));
    ConstRowMajorMap mb(b.data.data(), b.dim(0), b.dim(1));
    Eigen::MatrixXf lhs = trans_a ? Eigen::MatrixXf(ma.transpose()) : Eigen::MatrixXf(ma);
    Eigen::MatrixXf rhs = trans_b ? Eigen::MatrixXf(mb.transpose()) : Eigen::MatrixXf(mb);
    if (lhs.cols() != rhs.rows()) throw ShapeError("gemm: inner dimensions differ");
    Tensor y({lhs.rows(), rhs.cols()});
    RowMajorMap out(y.data.data(), lhs.rows(), rhs.cols());
    out.noalias() = alpha * (lhs * rhs);
    if (c && beta != 0.0f) {
        Tensor scaled = *c;
        for (float& v : scaled.data) v *= beta;
        Tensor sum = binary(y, scaled, BinaryOp::add);
        if (sum.shape != y.shape) throw ShapeError("gemm: C does not broadcast to the output");
        return sum;
    }
    return y;
}

}  // namespace whalesift::nn
