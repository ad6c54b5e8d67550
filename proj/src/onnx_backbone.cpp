// A small ONNX graph interpreter covering the operator set used by common
// image classification backbones (ResNet, VGG, Inception, MobileNet exports).

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include <google/protobuf/io/coded_stream.h>
#include <google/protobuf/io/zero_copy_stream_impl_lite.h>

#include "onnx.pb.h"
#include "whalesift/backbone.hpp"
#include "whalesift/corpus.hpp"

namespace whalesift::backbone {

namespace {

using nn::Shape;
using nn::Tensor;

/// Integer tensors (shapes, indices) travel beside float activations.
struct Value {
    Shape shape;
    std::vector<float> f;
    std::vector<std::int64_t> i;
    bool integer = false;

    static Value of(Tensor t) {
        Value v;
        v.shape = std::move(t.shape);
        v.f = std::move(t.data);
        return v;
    }
    static Value ints(Shape shape, std::vector<std::int64_t> data) {
        Value v;
        v.shape = std::move(shape);
        v.i = std::move(data);
        v.integer = true;
        return v;
    }
    std::int64_t size() const { return nn::element_count(shape); }
};

Tensor as_float(const Value& v) {
    if (!v.integer) return Tensor(v.shape, v.f);
    std::vector<float> data(v.i.begin(), v.i.end());
    return Tensor(v.shape, std::move(data));
}

std::vector<std::int64_t> as_ints(const Value& v) {
    if (v.integer) return v.i;
    std::vector<std::int64_t> out;
    out.reserve(v.f.size());
    for (float x : v.f) out.push_back(static_cast<std::int64_t>(x));
    return out;
}

const std::set<std::string>& supported_ops() {
    static const std::set<std::string> ops = {
        "Add",      "AveragePool", "BatchNormalization", "Cast",      "Clip",    "Concat",  "Constant", "Conv",
        "Div",      "Dropout",     "Flatten",            "Gather",    "Gemm",    "GlobalAveragePool",
        "Identity", "MatMul",      "MaxPool",            "Mul",       "Pad",     "ReduceMean",
        "Relu",     "Reshape",     "Shape",              "Sigmoid",   "Squeeze", "Sub",
        "Tanh",     "Transpose",   "Unsqueeze",
    };
    return ops;
}

bool is_integer_type(int dtype) {
    using TP = onnx::TensorProto;
    return dtype == TP::INT64 || dtype == TP::INT32 || dtype == TP::INT8 || dtype == TP::UINT8 || dtype == TP::INT16 ||
           dtype == TP::BOOL;
}

template <typename T>
std::vector<T> raw_values(const std::string& raw, std::int64_t count, const std::string& name) {
    if (raw.size() != static_cast<std::size_t>(count) * sizeof(T))
        throw ModelFileError("initializer '" + name + "': raw data has the wrong size");
    std::vector<T> out(static_cast<std::size_t>(count));
    std::memcpy(out.data(), raw.data(), raw.size());  // ONNX raw data is little-endian
    return out;
}

Value from_tensor_proto(const onnx::TensorProto& t) {
    using TP = onnx::TensorProto;
    Shape shape(t.dims().begin(), t.dims().end());
    const std::int64_t n = nn::element_count(shape);
    const std::string& name = t.name();
    if (t.data_location() == TP::EXTERNAL)
        throw ModelFileError("initializer '" + name + "' uses external data, which is not supported");
    const bool raw = t.has_raw_data();
    switch (t.data_type()) {
        case TP::FLOAT: {
            Value v;
            v.shape = shape;
            v.f = raw ? raw_values<float>(t.raw_data(), n, name) : std::vector<float>(t.float_data().begin(), t.float_data().end());
            if (static_cast<std::int64_t>(v.f.size()) != n) throw ModelFileError("initializer '" + name + "': element count mismatch");
            return v;
        }
        case TP::DOUBLE: {
            std::vector<double> d =
                raw ? raw_values<double>(t.raw_data(), n, name) : std::vector<double>(t.double_data().begin(), t.double_data().end());
            if (static_cast<std::int64_t>(d.size()) != n) throw ModelFileError("initializer '" + name + "': element count mismatch");
            Value v;
            v.shape = shape;
            v.f.assign(d.begin(), d.end());
            return v;
        }
        case TP::INT64: {
            std::vector<std::int64_t> d = raw ? raw_values<std::int64_t>(t.raw_data(), n, name)
                                              : std::vector<std::int64_t>(t.int64_data().begin(), t.int64_data().end());
            if (static_cast<std::int64_t>(d.size()) != n) throw ModelFileError("initializer '" + name + "': element count mismatch");
            return Value::ints(shape, std::move(d));
        }
        case TP::INT32: {
            std::vector<std::int64_t> d;
            if (raw) {
                auto r = raw_values<std::int32_t>(t.raw_data(), n, name);
                d.assign(r.begin(), r.end());
            } else {
                d.assign(t.int32_data().begin(), t.int32_data().end());
            }
            if (static_cast<std::int64_t>(d.size()) != n) throw ModelFileError("initializer '" + name + "': element count mismatch");
            return Value::ints(shape, std::move(d));
        }
        default:
            throw ModelFileError("initializer '" + name + "' has unsupported element type " + std::to_string(t.data_type()));
    }
}

struct Attributes {
    std::map<std::string, const onnx::AttributeProto*> by_name;

    const onnx::AttributeProto* find(const std::string& n) const {
        auto it = by_name.find(n);
        return it == by_name.end() ? nullptr : it->second;
    }
    std::int64_t i(const std::string& n, std::int64_t fallback) const {
        const auto* a = find(n);
        return a ? a->i() : fallback;
    }
    float f(const std::string& n, float fallback) const {
        const auto* a = find(n);
        return a ? a->f() : fallback;
    }
    std::string s(const std::string& n, const std::string& fallback) const {
        const auto* a = find(n);
        return a ? a->s() : fallback;
    }
    std::vector<std::int64_t> ints(const std::string& n) const {
        const auto* a = find(n);
        if (!a) return {};
        return {a->ints().begin(), a->ints().end()};
    }
};

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
    return axis;
}

struct Window {
    std::int64_t kh, kw, sh, sw, dh, dw;
    std::int64_t pt, pl, pb, pr;
};

/// Resolves kernel, stride, dilation and padding, including auto_pad.
Window window_for(const Attributes& a, const Shape& x, std::int64_t kh, std::int64_t kw) {
    Window w{};
    w.kh = kh;
    w.kw = kw;
    auto strides = a.ints("strides");
    auto dil = a.ints("dilations");
    w.sh = strides.size() == 2 ? strides[0] : 1;
    w.sw = strides.size() == 2 ? strides[1] : 1;
    w.dh = dil.size() == 2 ? dil[0] : 1;
    w.dw = dil.size() == 2 ? dil[1] : 1;
    const std::string auto_pad = a.s("auto_pad", "NOTSET");
    if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
        auto split = [&](std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t d, std::int64_t& lo, std::int64_t& hi) {
            const std::int64_t out = (in + s - 1) / s;
            const std::int64_t total = std::max<std::int64_t>((out - 1) * s + (k - 1) * d + 1 - in, 0);
            const std::int64_t small = total / 2;
            lo = auto_pad == "SAME_UPPER" ? small : total - small;
            hi = total - lo;
        };
        split(x[2], kh, w.sh, w.dh, w.pt, w.pb);
        split(x[3], kw, w.sw, w.dw, w.pl, w.pr);
    } else if (auto_pad == "NOTSET") {
        auto pads = a.ints("pads");
        if (!pads.empty()) {
            if (pads.size() != 4) throw ShapeError("pads must have 4 entries for 2-D windows");
            w.pt = pads[0];
            w.pl = pads[1];
            w.pb = pads[2];
            w.pr = pads[3];
        }
    } else if (auto_pad != "VALID") {
        throw ShapeError("unknown auto_pad '" + auto_pad + "'");
    }
    return w;
}

class OnnxBackbone final : public Backbone {
public:
    OnnxBackbone(const BackboneSpec& spec) {
        const std::filesystem::path& path = *spec.model_path;
        std::string bytes;
        try {
            bytes = read_file(path);
        } catch (const IoError& e) {
            throw ModelFileError(e.what());
        }
        google::protobuf::io::ArrayInputStream raw(bytes.data(), static_cast<int>(bytes.size()));
        google::protobuf::io::CodedInputStream coded(&raw);
        coded.SetTotalBytesLimit(INT_MAX);
        if (!model_.ParseFromCodedStream(&coded) || !model_.has_graph())
            throw ModelFileError(path.string() + ": not a readable ONNX model");
        const onnx::GraphProto& g = model_.graph();

        for (const auto& init : g.initializer()) constants_[init.name()] = from_tensor_proto(init);
        for (const auto& node : g.node()) {
            if (!node.domain().empty() && node.domain() != "ai.onnx")
                throw UnsupportedOperatorError("operator " + node.domain() + "::" + node.op_type() + " is not supported");
            if (!supported_ops().count(node.op_type()))
                throw UnsupportedOperatorError("operator '" + node.op_type() + "' (node '" + node.name() + "') is not supported");
        }

        const onnx::ValueInfoProto* input = nullptr;
        for (const auto& vi : g.input())
            if (!constants_.count(vi.name())) {
                if (input) throw ModelFileError(path.string() + ": model has more than one runtime input");
                input = &vi;
            }
        if (!input) throw ModelFileError(path.string() + ": model has no runtime input");
        if (g.output_size() < 1) throw ModelFileError(path.string() + ": model has no output");
        input_name_ = input->name();
        output_name_ = g.output(0).name();

        const Shape in_dims = declared_dims(*input);
        if (in_dims.size() != 4) throw BackboneShapeError(path.string() + ": model input must be 4-D image batch");
        if (in_dims[1] == 3 && in_dims[3] != 3) {
            nhwc_ = false;
        } else if (in_dims[3] == 3) {
            nhwc_ = true;
        } else {
            throw BackboneShapeError(path.string() + ": model input has no 3-channel axis");
        }
        const std::int64_t h = nhwc_ ? in_dims[1] : in_dims[2];
        const std::int64_t w = nhwc_ ? in_dims[2] : in_dims[3];
        if (h > 0 && w > 0 && h != w) throw BackboneShapeError(path.string() + ": model input is not square");
        std::int64_t side = h > 0 ? h : w;
        if (side <= 0) side = spec.input_side_px > 0 ? spec.input_side_px : frames::kDefaultSidePx;
        if (spec.input_side_px > 0 && spec.input_side_px != side)
            throw BackboneShapeError("backbone spec expects " + std::to_string(spec.input_side_px) + " px input, model '" +
                                     path.string() + "' takes " + std::to_string(side));

        info_.name = spec.name;
        info_.input_side_px = static_cast<int>(side);
        info_.pixel_scale = spec.pixel_scale;

        const Shape out_dims = declared_dims(g.output(0));
        std::int64_t dim = 1;
        bool known = !out_dims.empty();
        for (std::size_t k = 1; k < out_dims.size(); ++k) {
            if (out_dims[k] <= 0) known = false;
            else dim *= out_dims[k];
        }
        if (!known) {
            frames::Frame probe = frames::Frame::Zero(side * side, 3);
            dim = run(probe).size();
        }
        if (spec.output_dim > 0 && spec.output_dim != dim)
            throw BackboneShapeError("backbone spec expects " + std::to_string(spec.output_dim) + " features, model '" +
                                     path.string() + "' produces " + std::to_string(dim));
        info_.output_dim = static_cast<int>(dim);
    }

    const BackboneInfo& info() const noexcept override { return info_; }

    Eigen::VectorXf embed(const frames::Frame& frame) const override {
        const std::int64_t side = info_.input_side_px;
        if (frame.rows() != side * side)
            throw BackboneShapeError("frame has " + std::to_string(frame.rows()) + " pixels, model expects " +
                                     std::to_string(side) + "x" + std::to_string(side));
        std::vector<float> out = run(frame);
        if (static_cast<int>(out.size()) != info_.output_dim)
            throw BackboneShapeError("model produced " + std::to_string(out.size()) + " features, declared " +
                                     std::to_string(info_.output_dim));
        return Eigen::Map<const Eigen::VectorXf>(out.data(), static_cast<Eigen::Index>(out.size()));
    }

private:
    static Shape declared_dims(const onnx::ValueInfoProto& vi) {
        Shape dims;
        if (!vi.type().has_tensor_type() || !vi.type().tensor_type().has_shape()) return dims;
        for (const auto& d : vi.type().tensor_type().shape().dim()) dims.push_back(d.has_dim_value() ? d.dim_value() : -1);
        return dims;
    }

    std::vector<float> run(const frames::Frame& frame) const {
        const std::int64_t side = info_.input_side_px;
        Tensor x;
        if (nhwc_) {
            x = Tensor({1, side, side, 3}, std::vector<float>(frame.data(), frame.data() + frame.size()));
        } else {
            x = Tensor({1, 3, side, side});
            const std::int64_t plane = side * side;
            for (std::int64_t p = 0; p < plane; ++p)
                for (int c = 0; c < 3; ++c) x.data[static_cast<std::size_t>(c * plane + p)] = frame(p, c);
        }
        std::unordered_map<std::string, Value> env;
        env[input_name_] = Value::of(std::move(x));
        for (const auto& node : model_.graph().node()) execute(node, env);
        auto it = env.find(output_name_);
        if (it == env.end()) throw ModelFileError("graph output '" + output_name_ + "' was never produced");
        return as_float(it->second).data;
    }

    const Value& get(const std::unordered_map<std::string, Value>& env, const std::string& name) const {
        if (auto it = env.find(name); it != env.end()) return it->second;
        if (auto it = constants_.find(name); it != constants_.end()) return it->second;
        throw ModelFileError("value '" + name + "' is used before it is defined");
    }

    const Value* optional_input(const onnx::NodeProto& node, int k, const std::unordered_map<std::string, Value>& env) const {
        if (node.input_size() <= k || node.input(k).empty()) return nullptr;
        return &get(env, node.input(k));
    }

    void execute(const onnx::NodeProto& node, std::unordered_map<std::string, Value>& env) const {
        Attributes a;
        for (const auto& attr : node.attribute()) a.by_name[attr.name()] = &attr;
        const std::string& op = node.op_type();
        auto in = [&](int k) -> const Value& { return get(env, node.input(k)); };
        auto put = [&](Value v) { env[node.output(0)] = std::move(v); };

        if (op == "Identity" || op == "Dropout") {
            put(in(0));
        } else if (op == "Constant") {
            const auto* t = a.find("value");
            if (!t) throw UnsupportedOperatorError("Constant without a tensor 'value' is not supported");
            put(from_tensor_proto(t->t()));
        } else if (op == "Relu") {
            Tensor t = as_float(in(0));
            nn::relu_inplace(t);
            put(Value::of(std::move(t)));
        } else if (op == "Sigmoid" || op == "Tanh") {
            Tensor t = as_float(in(0));
            if (op == "Sigmoid")
                for (float& v : t.data) v = 1.0f / (1.0f + std::exp(-v));
            else
                for (float& v : t.data) v = std::tanh(v);
            put(Value::of(std::move(t)));
        } else if (op == "Clip") {
            Tensor t = as_float(in(0));
            float lo = a.f("min", -INFINITY), hi = a.f("max", INFINITY);
            if (const Value* m = optional_input(node, 1, env)) lo = as_float(*m).data.at(0);
            if (const Value* m = optional_input(node, 2, env)) hi = as_float(*m).data.at(0);
            for (float& v : t.data) v = std::clamp(v, lo, hi);
            put(Value::of(std::move(t)));
        } else if (op == "Add" || op == "Sub" || op == "Mul" || op == "Div") {
            const Value& l = in(0);
            const Value& r = in(1);
            if (l.integer && r.integer) {
                put(integer_binary(l, r, op));
            } else {
                const nn::BinaryOp bop = op == "Add"   ? nn::BinaryOp::add
                                         : op == "Sub" ? nn::BinaryOp::sub
                                         : op == "Mul" ? nn::BinaryOp::mul
                                                       : nn::BinaryOp::div;
                put(Value::of(nn::binary(as_float(l), as_float(r), bop)));
            }
        } else if (op == "Conv") {
            const Tensor x = as_float(in(0));
            const Tensor w = as_float(in(1));
            if (x.rank() != 4 || w.rank() != 4) throw UnsupportedOperatorError("only 2-D Conv is supported");
            std::optional<Tensor> b;
            if (const Value* bv = optional_input(node, 2, env)) b = as_float(*bv);
            const Window win = window_for(a, x.shape, w.dim(2), w.dim(3));
            nn::Conv2dParams p;
            p.stride_h = win.sh;
            p.stride_w = win.sw;
            p.dilation_h = win.dh;
            p.dilation_w = win.dw;
            p.pad_top = win.pt;
            p.pad_left = win.pl;
            p.pad_bottom = win.pb;
            p.pad_right = win.pr;
            p.groups = a.i("group", 1);
            put(Value::of(nn::conv2d(x, w, b ? &*b : nullptr, p)));
        } else if (op == "MaxPool" || op == "AveragePool") {
            const Tensor x = as_float(in(0));
            if (x.rank() != 4) throw UnsupportedOperatorError(op + " supports 4-D input only");
            const auto k = a.ints("kernel_shape");
            if (k.size() != 2) throw UnsupportedOperatorError(op + " needs a 2-D kernel_shape");
            const auto dil = a.ints("dilations");
            if (!dil.empty() && (dil[0] != 1 || dil[1] != 1)) throw UnsupportedOperatorError("dilated pooling is not supported");
            if (op == "MaxPool" && node.output_size() > 1 && !node.output(1).empty())
                throw UnsupportedOperatorError("MaxPool indices output is not supported");
            const Window win = window_for(a, x.shape, k[0], k[1]);
            nn::Pool2dParams p;
            p.kernel_h = k[0];
            p.kernel_w = k[1];
            p.stride_h = win.sh;
            p.stride_w = win.sw;
            p.pad_top = win.pt;
            p.pad_left = win.pl;
            p.pad_bottom = win.pb;
            p.pad_right = win.pr;
            p.ceil_mode = a.i("ceil_mode", 0) != 0;
            p.count_include_pad = a.i("count_include_pad", 0) != 0;
            put(Value::of(op == "MaxPool" ? nn::max_pool2d(x, p) : nn::avg_pool2d(x, p)));
        } else if (op == "GlobalAveragePool") {
            put(Value::of(nn::global_avg_pool(as_float(in(0)))));
        } else if (op == "BatchNormalization") {
            if (a.i("training_mode", 0) != 0) throw UnsupportedOperatorError("BatchNormalization in training mode");
            put(Value::of(nn::batch_norm(as_float(in(0)), as_float(in(1)), as_float(in(2)), as_float(in(3)), as_float(in(4)),
                                         a.f("epsilon", 1e-5f))));
        } else if (op == "ReduceMean") {
            const Tensor x = as_float(in(0));
            std::vector<std::int64_t> axes = a.ints("axes");
            if (const Value* av = optional_input(node, 1, env)) axes = as_ints(*av);
            if (axes.empty()) {
                if (a.i("noop_with_empty_axes", 0) != 0) {
                    put(in(0));
                    return;
                }
                axes.resize(x.rank());
                std::iota(axes.begin(), axes.end(), 0);
            }
            put(Value::of(nn::reduce_mean(x, axes, a.i("keepdims", 1) != 0)));
        } else if (op == "Concat") {
            std::vector<Tensor> parts;
            bool all_int = true;
            for (int k = 0; k < node.input_size(); ++k) {
                all_int = all_int && in(k).integer;
                parts.push_back(as_float(in(k)));
            }
            std::vector<const Tensor*> ptrs;
            for (const auto& t : parts) ptrs.push_back(&t);
            const std::int64_t axis = normalize_axis(a.i("axis", 0), static_cast<std::int64_t>(parts.at(0).rank()));
            Tensor out = nn::concat(ptrs, axis);
            if (all_int) {
                std::vector<std::int64_t> d(out.data.begin(), out.data.end());
                put(Value::ints(out.shape, std::move(d)));
            } else {
                put(Value::of(std::move(out)));
            }
        } else if (op == "Flatten") {
            Value v = in(0);
            const auto rank = static_cast<std::int64_t>(v.shape.size());
            std::int64_t axis = a.i("axis", 1);
            if (axis < 0) axis += rank;
            if (axis < 0 || axis > rank) throw ShapeError("Flatten axis out of range");
            std::int64_t outer = 1, inner = 1;
            for (std::int64_t k = 0; k < rank; ++k) (k < axis ? outer : inner) *= v.shape[static_cast<std::size_t>(k)];
            v.shape = {outer, inner};
            put(std::move(v));
        } else if (op == "Reshape") {
            Value v = in(0);
            const auto target = as_ints(in(1));
            const bool allow_zero = a.i("allowzero", 0) != 0;
            Shape shape;
            std::int64_t known = 1;
            int infer = -1;
            for (std::size_t k = 0; k < target.size(); ++k) {
                std::int64_t d = target[k];
                if (d == 0 && !allow_zero) d = v.shape.at(k);
                if (d == -1) {
                    if (infer >= 0) throw ShapeError("Reshape with two -1 entries");
                    infer = static_cast<int>(k);
                } else {
                    known *= d;
                }
                shape.push_back(d);
            }
            if (infer >= 0) shape[static_cast<std::size_t>(infer)] = known == 0 ? 0 : v.size() / known;
            if (nn::element_count(shape) != v.size())
                throw ShapeError("Reshape " + nn::shape_string(v.shape) + " -> " + nn::shape_string(shape));
            v.shape = std::move(shape);
            put(std::move(v));
        } else if (op == "Squeeze" || op == "Unsqueeze") {
            Value v = in(0);
            std::vector<std::int64_t> axes = a.ints("axes");
            if (const Value* av = optional_input(node, 1, env)) axes = as_ints(*av);
            if (op == "Squeeze") {
                const auto rank = static_cast<std::int64_t>(v.shape.size());
                std::set<std::int64_t> drop;
                for (auto ax : axes) drop.insert(normalize_axis(ax, rank));
                Shape shape;
                for (std::int64_t k = 0; k < rank; ++k) {
                    const auto d = v.shape[static_cast<std::size_t>(k)];
                    const bool squeeze = axes.empty() ? d == 1 : drop.count(k) > 0;
                    if (squeeze && d != 1) throw ShapeError("Squeeze of a non-unit axis");
                    if (!squeeze) shape.push_back(d);
                }
                v.shape = std::move(shape);
            } else {
                const auto rank = static_cast<std::int64_t>(v.shape.size() + axes.size());
                std::set<std::int64_t> add;
                for (auto ax : axes) add.insert(normalize_axis(ax, rank));
                Shape shape;
                std::size_t src = 0;
                for (std::int64_t k = 0; k < rank; ++k) shape.push_back(add.count(k) ? 1 : v.shape.at(src++));
                v.shape = std::move(shape);
            }
            put(std::move(v));
        } else if (op == "Transpose") {
            const Value& v = in(0);
            std::vector<std::int64_t> perm = a.ints("perm");
            if (perm.empty()) {
                perm.resize(v.shape.size());
                std::iota(perm.rbegin(), perm.rend(), 0);
            }
            if (v.integer) {
                Tensor t = nn::transpose(as_float(v), perm);
                put(Value::ints(t.shape, std::vector<std::int64_t>(t.data.begin(), t.data.end())));
            } else {
                put(Value::of(nn::transpose(as_float(v), perm)));
            }
        } else if (op == "Gemm") {
            std::optional<Tensor> c;
            if (const Value* cv = optional_input(node, 2, env)) c = as_float(*cv);
            put(Value::of(nn::gemm(as_float(in(0)), as_float(in(1)), c ? &*c : nullptr, a.f("alpha", 1.0f), a.f("beta", 1.0f),
                                   a.i("transA", 0) != 0, a.i("transB", 0) != 0)));
        } else if (op == "MatMul") {
            Tensor l = as_float(in(0));
            const Tensor r = as_float(in(1));
            if (r.rank() != 2 || l.rank() < 1) throw UnsupportedOperatorError("MatMul supports a 2-D right operand only");
            Shape out_shape = l.shape;
            const std::int64_t k = l.shape.back();
            l.shape = {l.size() / k, k};
            Tensor y = nn::gemm(l, r, nullptr, 1.0f, 0.0f, false, false);
            out_shape.back() = r.dim(1);
            y.shape = out_shape;
            put(Value::of(std::move(y)));
        } else if (op == "Shape") {
            const Value& v = in(0);
            put(Value::ints({static_cast<std::int64_t>(v.shape.size())}, std::vector<std::int64_t>(v.shape)));
        } else if (op == "Gather") {
            put(gather(in(0), as_ints(in(1)), in(1).shape, a.i("axis", 0)));
        } else if (op == "Cast") {
            const Value& v = in(0);
            if (is_integer_type(static_cast<int>(a.i("to", onnx::TensorProto::FLOAT))))
                put(Value::ints(v.shape, as_ints(v)));
            else
                put(Value::of(as_float(v)));
        } else if (op == "Pad") {
            put(Value::of(pad(node, a, env)));
        } else {
            throw UnsupportedOperatorError("operator '" + op + "' is not supported");
        }
    }

    static Value integer_binary(const Value& l, const Value& r, const std::string& op) {
        const Shape shape = nn::broadcast_shape(l.shape, r.shape);
        if (l.size() != nn::element_count(shape) && l.size() != 1) throw UnsupportedOperatorError("integer broadcast");
        if (r.size() != nn::element_count(shape) && r.size() != 1) throw UnsupportedOperatorError("integer broadcast");
        std::vector<std::int64_t> out(static_cast<std::size_t>(nn::element_count(shape)));
        for (std::size_t k = 0; k < out.size(); ++k) {
            const auto x = l.i[l.i.size() == 1 ? 0 : k];
            const auto y = r.i[r.i.size() == 1 ? 0 : k];
            out[k] = op == "Add" ? x + y : op == "Sub" ? x - y : op == "Mul" ? x * y : (y == 0 ? 0 : x / y);
        }
        return Value::ints(shape, std::move(out));
    }

    static Value gather(const Value& data, const std::vector<std::int64_t>& idx, const Shape& idx_shape, std::int64_t axis) {
        const auto rank = static_cast<std::int64_t>(data.shape.size());
        axis = normalize_axis(axis, rank);
        std::int64_t outer = 1, inner = 1;
        for (std::int64_t k = 0; k < axis; ++k) outer *= data.shape[static_cast<std::size_t>(k)];
        for (std::int64_t k = axis + 1; k < rank; ++k) inner *= data.shape[static_cast<std::size_t>(k)];
        const std::int64_t extent = data.shape[static_cast<std::size_t>(axis)];
        Shape shape(data.shape.begin(), data.shape.begin() + axis);
        shape.insert(shape.end(), idx_shape.begin(), idx_shape.end());
        shape.insert(shape.end(), data.shape.begin() + axis + 1, data.shape.end());
        Value out;
        out.shape = shape;
        out.integer = data.integer;
        const auto n = static_cast<std::size_t>(nn::element_count(shape));
        if (data.integer) out.i.resize(n);
        else out.f.resize(n);
        std::size_t dst = 0;
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t raw : idx) {
                const std::int64_t j = raw < 0 ? raw + extent : raw;
                if (j < 0 || j >= extent) throw ShapeError("Gather index out of range");
                const std::size_t src = static_cast<std::size_t>((o * extent + j) * inner);
                for (std::int64_t q = 0; q < inner; ++q, ++dst) {
                    if (data.integer) out.i[dst] = data.i[src + static_cast<std::size_t>(q)];
                    else out.f[dst] = data.f[src + static_cast<std::size_t>(q)];
                }
            }
        return out;
    }

    Tensor pad(const onnx::NodeProto& node, const Attributes& a, const std::unordered_map<std::string, Value>& env) const {
        const Tensor x = as_float(get(env, node.input(0)));
        if (a.s("mode", "constant") != "constant") throw UnsupportedOperatorError("Pad supports constant mode only");
        std::vector<std::int64_t> pads = a.ints("pads");
        float value = a.f("value", 0.0f);
        if (const Value* pv = optional_input(node, 1, env)) pads = as_ints(*pv);
        if (const Value* cv = optional_input(node, 2, env)) value = as_float(*cv).data.at(0);
        if (optional_input(node, 3, env)) throw UnsupportedOperatorError("Pad with explicit axes is not supported");
        const std::size_t rank = x.rank();
        if (pads.size() != 2 * rank) throw ShapeError("Pad: pads must have 2 * rank entries");
        Shape shape(rank);
        for (std::size_t k = 0; k < rank; ++k) {
            if (pads[k] < 0 || pads[k + rank] < 0) throw UnsupportedOperatorError("negative Pad is not supported");
            shape[k] = x.shape[k] + pads[k] + pads[k + rank];
        }
        Tensor y(shape, value);
        std::vector<std::int64_t> in_stride(rank, 1), out_stride(rank, 1);
        for (std::size_t k = rank; k-- > 1;) {
            in_stride[k - 1] = in_stride[k] * x.shape[k];
            out_stride[k - 1] = out_stride[k] * shape[k];
        }
        for (std::int64_t flat = 0; flat < x.size(); ++flat) {
            std::int64_t rem = flat, dst = 0;
            for (std::size_t k = 0; k < rank; ++k) {
                const std::int64_t c = rem / in_stride[k];
                rem %= in_stride[k];
                dst += (c + pads[k]) * out_stride[k];
            }
            y.data[static_cast<std::size_t>(dst)] = x.data[static_cast<std::size_t>(flat)];
        }
        return y;
    }

    onnx::ModelProto model_;
    std::unordered_map<std::string, Value> constants_;
    std::string input_name_, output_name_;
    bool nhwc_ = false;
    BackboneInfo info_;
};

}  // namespace

std::unique_ptr<Backbone> load_onnx_backbone(const BackboneSpec& spec) {
    if (!spec.model_path) throw InvalidArgument("load_onnx_backbone: no model path");
    return std::make_unique<OnnxBackbone>(spec);
}

}  // namespace whalesift::backbone
