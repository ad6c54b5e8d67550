#pragma once

// Recurrent relevance head: GRU (full sequence) -> GRU (final state) ->
// dropout -> dense + ReLU -> dense -> softmax over {irrelevant, relevant}.
//
// Everything is templated on the scalar type so the same code path is used
// for float inference and for double-precision gradient checking.
//
// Row convention: a sequence is a T x D matrix whose rows are time steps, and
// kernels are (fan_in x fan_out) so a step computes x * K + h * U + b.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "whalesift/corpus.hpp"
#include "whalesift/error.hpp"
#include "whalesift/rng.hpp"

namespace whalesift::seq {

using Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

inline constexpr double kLossEpsilon = 1e-12;
inline constexpr double kDefaultDropoutRate = 0.4;

// ---------------------------------------------------------------------------
// Parameters

template <typename Scalar>
struct GruParams {
    Matrix<Scalar> kernel_z, kernel_r, kernel_h;           // in x H
    Matrix<Scalar> recurrent_z, recurrent_r, recurrent_h;  // H x H
    Vector<Scalar> bias_z, bias_r, bias_h;                 // H

    Index input_dim() const noexcept { return kernel_z.rows(); }
    Index hidden_dim() const noexcept { return kernel_z.cols(); }

    static GruParams zeros(Index input_dim, Index hidden_dim) {
        GruParams p;
        p.kernel_z = p.kernel_r = p.kernel_h = Matrix<Scalar>::Zero(input_dim, hidden_dim);
        p.recurrent_z = p.recurrent_r = p.recurrent_h = Matrix<Scalar>::Zero(hidden_dim, hidden_dim);
        p.bias_z = p.bias_r = p.bias_h = Vector<Scalar>::Zero(hidden_dim);
        return p;
    }

    void check() const {
        const Index in = input_dim(), h = hidden_dim();
        auto bad = [&](const auto& m, Index r, Index c) { return m.rows() != r || m.cols() != c; };
        if (bad(kernel_r, in, h) || bad(kernel_h, in, h) || bad(recurrent_z, h, h) || bad(recurrent_r, h, h) ||
            bad(recurrent_h, h, h) || bad(bias_z, h, 1) || bad(bias_r, h, 1) || bad(bias_h, h, 1))
            throw ShapeError("GRU parameter shapes are inconsistent");
    }
};

struct NetworkShape {
    Index input_dim = 0;
    Index gru1 = 16;
    Index gru2 = 8;
    Index dense = 8;

    friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

template <typename Scalar>
struct NetworkParams {
    GruParams<Scalar> gru1;
    GruParams<Scalar> gru2;
    Matrix<Scalar> dense1_kernel;  // H2 x H3
    Vector<Scalar> dense1_bias;
    Matrix<Scalar> dense2_kernel;  // H3 x 2
    Vector<Scalar> dense2_bias;
    Scalar dropout_rate = Scalar(kDefaultDropoutRate);

    NetworkShape shape() const noexcept {
        return {gru1.input_dim(), gru1.hidden_dim(), gru2.hidden_dim(), dense1_kernel.cols()};
    }

    static NetworkParams zeros(const NetworkShape& s) {
        NetworkParams n;
        n.gru1 = GruParams<Scalar>::zeros(s.input_dim, s.gru1);
        n.gru2 = GruParams<Scalar>::zeros(s.gru1, s.gru2);
        n.dense1_kernel = Matrix<Scalar>::Zero(s.gru2, s.dense);
        n.dense1_bias = Vector<Scalar>::Zero(s.dense);
        n.dense2_kernel = Matrix<Scalar>::Zero(s.dense, kNumClasses);
        n.dense2_bias = Vector<Scalar>::Zero(kNumClasses);
        return n;
    }

    void check() const {
        gru1.check();
        gru2.check();
        if (gru2.input_dim() != gru1.hidden_dim() || dense1_kernel.rows() != gru2.hidden_dim() ||
            dense1_bias.size() != dense1_kernel.cols() || dense2_kernel.rows() != dense1_kernel.cols() ||
            dense2_kernel.cols() != kNumClasses || dense2_bias.size() != kNumClasses)
            throw ShapeError("network parameter shapes are inconsistent");
        if (!(dropout_rate >= Scalar(0)) || !(dropout_rate < Scalar(1)))
            throw InvalidArgument("dropout rate must lie in [0, 1)");
    }

    template <typename Other>
    NetworkParams<Other> cast() const;
};

/// Visits every parameter block of one or more networks in declared order,
/// calling f(name, block_of_net_0, block_of_net_1, ...). Blocks are Eigen
/// matrices or vectors; this order is also the checkpoint order.
template <typename F, typename... Nets>
void for_each_block(F&& f, Nets&... nets) {
    f("gru1.kernel_z", nets.gru1.kernel_z...);
    f("gru1.kernel_r", nets.gru1.kernel_r...);
    f("gru1.kernel_h", nets.gru1.kernel_h...);
    f("gru1.recurrent_z", nets.gru1.recurrent_z...);
    f("gru1.recurrent_r", nets.gru1.recurrent_r...);
    f("gru1.recurrent_h", nets.gru1.recurrent_h...);
    f("gru1.bias_z", nets.gru1.bias_z...);
    f("gru1.bias_r", nets.gru1.bias_r...);
    f("gru1.bias_h", nets.gru1.bias_h...);
    f("gru2.kernel_z", nets.gru2.kernel_z...);
    f("gru2.kernel_r", nets.gru2.kernel_r...);
    f("gru2.kernel_h", nets.gru2.kernel_h...);
    f("gru2.recurrent_z", nets.gru2.recurrent_z...);
    f("gru2.recurrent_r", nets.gru2.recurrent_r...);
    f("gru2.recurrent_h", nets.gru2.recurrent_h...);
    f("gru2.bias_z", nets.gru2.bias_z...);
    f("gru2.bias_r", nets.gru2.bias_r...);
    f("gru2.bias_h", nets.gru2.bias_h...);
    f("dense1.kernel", nets.dense1_kernel...);
    f("dense1.bias", nets.dense1_bias...);
    f("dense2.kernel", nets.dense2_kernel...);
    f("dense2.bias", nets.dense2_bias...);
}

template <typename Scalar>
template <typename Other>
NetworkParams<Other> NetworkParams<Scalar>::cast() const {
    NetworkParams<Other> out = NetworkParams<Other>::zeros(shape());
    for_each_block([](std::string_view, auto& dst, const auto& src) { dst = src.template cast<Other>(); }, out, *this);
    out.dropout_rate = static_cast<Other>(dropout_rate);
    return out;
}

template <typename Scalar>
Index parameter_count(const NetworkParams<Scalar>& net) {
    Index n = 0;
    for_each_block([&](std::string_view, const auto& b) { n += b.size(); }, net);
    return n;
}

template <typename Scalar>
bool all_finite(const NetworkParams<Scalar>& net) {
    bool ok = true;
    for_each_block([&](std::string_view, const auto& b) { ok = ok && b.allFinite(); }, net);
    return ok;
}

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

template <typename Scalar>
Matrix<Scalar> glorot_uniform(Index fan_in, Index fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix<Scalar> m(fan_in, fan_out);
    for (Index c = 0; c < m.cols(); ++c)
        for (Index r = 0; r < m.rows(); ++r) m(r, c) = static_cast<Scalar>(dist(rng));
    return m;
}

template <typename Scalar>
Matrix<Scalar> orthogonal(Index n, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd g(n, n);
    for (Index c = 0; c < n; ++c)
        for (Index r = 0; r < n; ++r) g(r, c) = dist(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd r = qr.matrixQR().template triangularView<Eigen::Upper>();
    for (Index i = 0; i < n; ++i)
        if (r(i, i) < 0) q.col(i) = -q.col(i);
    return q.cast<Scalar>();
}

template <typename Scalar>
GruParams<Scalar> init_gru(Index in, Index h, Rng& rng) {
    GruParams<Scalar> p = GruParams<Scalar>::zeros(in, h);
    p.kernel_z = glorot_uniform<Scalar>(in, h, rng);
    p.kernel_r = glorot_uniform<Scalar>(in, h, rng);
    p.kernel_h = glorot_uniform<Scalar>(in, h, rng);
    p.recurrent_z = orthogonal<Scalar>(h, rng);
    p.recurrent_r = orthogonal<Scalar>(h, rng);
    p.recurrent_h = orthogonal<Scalar>(h, rng);
    return p;
}

}  // namespace detail

/// Input and dense kernels Glorot-uniform, recurrent matrices orthogonal,
/// biases zero. Fully determined by `rng`.
template <typename Scalar>
NetworkParams<Scalar> initialize(const NetworkShape& s, Rng& rng) {
    if (s.input_dim < 1 || s.gru1 < 1 || s.gru2 < 1 || s.dense < 1) throw InvalidArgument("layer sizes must be >= 1");
    NetworkParams<Scalar> n = NetworkParams<Scalar>::zeros(s);
    n.gru1 = detail::init_gru<Scalar>(s.input_dim, s.gru1, rng);
    n.gru2 = detail::init_gru<Scalar>(s.gru1, s.gru2, rng);
    n.dense1_kernel = detail::glorot_uniform<Scalar>(s.gru2, s.dense, rng);
    n.dense2_kernel = detail::glorot_uniform<Scalar>(s.dense, kNumClasses, rng);
    return n;
}

// ---------------------------------------------------------------------------
// GRU

template <typename Scalar>
Scalar sigmoid(Scalar a) {
    return Scalar(1) / (Scalar(1) + std::exp(-a));
}

/// One step:
///   z = sigmoid(x Kz + h Uz + bz)
///   r = sigmoid(x Kr + h Ur + br)
///   c = tanh(x Kh + (r * h) Uh + bh)
///   h' = z * h + (1 - z) * c
template <typename Scalar>
Vector<Scalar> gru_cell(const GruParams<Scalar>& p, const Eigen::Ref<const Vector<Scalar>>& x,
                        const Eigen::Ref<const Vector<Scalar>>& h_prev) {
    if (x.size() != p.input_dim() || h_prev.size() != p.hidden_dim())
        throw ShapeError("gru_cell: input or state size does not match parameters");
    const Vector<Scalar> z =
        (p.kernel_z.transpose() * x + p.recurrent_z.transpose() * h_prev + p.bias_z).unaryExpr(&sigmoid<Scalar>);
    const Vector<Scalar> r =
        (p.kernel_r.transpose() * x + p.recurrent_r.transpose() * h_prev + p.bias_r).unaryExpr(&sigmoid<Scalar>);
    const Vector<Scalar> c =
        (p.kernel_h.transpose() * x + p.recurrent_h.transpose() * r.cwiseProduct(h_prev) + p.bias_h).array().tanh().matrix();
    return z.cwiseProduct(h_prev) + (Vector<Scalar>::Ones(z.size()) - z).cwiseProduct(c);
}

/// Per-step activations kept for backpropagation through time.
template <typename Scalar>
struct GruTrace {
    Matrix<Scalar> inputs;     // T x in
    Matrix<Scalar> z, r, c;    // T x H (gates and candidate)
    Matrix<Scalar> h;          // T x H (outputs)
};

template <typename Scalar>
GruTrace<Scalar> gru_trace(const GruParams<Scalar>& p, const Matrix<Scalar>& sequence) {
    const Index steps = sequence.rows(), hidden = p.hidden_dim();
    if (steps < 1) throw ShapeError("gru_layer: empty sequence");
    if (sequence.cols() != p.input_dim()) throw ShapeError("gru_layer: feature width does not match parameters");

    GruTrace<Scalar> t;
    t.inputs = sequence;
    // Input projections for all steps at once; only the recurrence is serial.
    const Matrix<Scalar> xz = (sequence * p.kernel_z).rowwise() + p.bias_z.transpose();
    const Matrix<Scalar> xr = (sequence * p.kernel_r).rowwise() + p.bias_r.transpose();
    const Matrix<Scalar> xh = (sequence * p.kernel_h).rowwise() + p.bias_h.transpose();
    t.z.resize(steps, hidden);
    t.r.resize(steps, hidden);
    t.c.resize(steps, hidden);
    t.h.resize(steps, hidden);

    RowVector<Scalar> h = RowVector<Scalar>::Zero(hidden);
    for (Index s = 0; s < steps; ++s) {
        const RowVector<Scalar> z = (xz.row(s) + h * p.recurrent_z).unaryExpr(&sigmoid<Scalar>);
        const RowVector<Scalar> r = (xr.row(s) + h * p.recurrent_r).unaryExpr(&sigmoid<Scalar>);
        const RowVector<Scalar> c = (xh.row(s) + r.cwiseProduct(h) * p.recurrent_h).array().tanh().matrix();
        h = z.cwiseProduct(h) + (RowVector<Scalar>::Ones(hidden) - z).cwiseProduct(c);
        t.z.row(s) = z;
        t.r.row(s) = r;
        t.c.row(s) = c;
        t.h.row(s) = h;
    }
    return t;
}

enum class GruOutput { full_sequence, final_state };

/// T x H for full_sequence, 1 x H for final_state. Initial state is zero.
template <typename Scalar>
Matrix<Scalar> gru_layer(const GruParams<Scalar>& p, const Matrix<Scalar>& sequence, GruOutput output) {
    GruTrace<Scalar> t = gru_trace(p, sequence);
    if (output == GruOutput::full_sequence) return std::move(t.h);
    return t.h.bottomRows(1);
}

/// Reverse pass through one layer. `d_out` holds dL/dh_t for every step
/// (zero rows where a step's output is unused). Accumulates into `grad` and
/// returns dL/dinputs (T x in).
template <typename Scalar>
Matrix<Scalar> gru_backward(const GruParams<Scalar>& p, const GruTrace<Scalar>& t, const Matrix<Scalar>& d_out,
                            GruParams<Scalar>& grad) {
    const Index steps = t.h.rows(), hidden = p.hidden_dim();
    Matrix<Scalar> d_inputs = Matrix<Scalar>::Zero(steps, p.input_dim());
    RowVector<Scalar> d_carry = RowVector<Scalar>::Zero(hidden);
    const RowVector<Scalar> ones = RowVector<Scalar>::Ones(hidden);

    for (Index s = steps - 1; s >= 0; --s) {
        const RowVector<Scalar> dh = d_out.row(s) + d_carry;
        const RowVector<Scalar> h_prev = s > 0 ? RowVector<Scalar>(t.h.row(s - 1)) : RowVector<Scalar>::Zero(hidden);
        const auto z = t.z.row(s);
        const auto r = t.r.row(s);
        const auto c = t.c.row(s);
        const auto x = t.inputs.row(s);

        const RowVector<Scalar> dc = dh.cwiseProduct(ones - z);
        const RowVector<Scalar> dz = dh.cwiseProduct(h_prev - c);
        RowVector<Scalar> dh_prev = dh.cwiseProduct(z);

        const RowVector<Scalar> da_c = dc.cwiseProduct(ones - c.cwiseProduct(c));
        const RowVector<Scalar> da_z = dz.cwiseProduct(z).cwiseProduct(ones - z);
        const RowVector<Scalar> rh = r.cwiseProduct(h_prev);

        grad.kernel_h.noalias() += x.transpose() * da_c;
        grad.recurrent_h.noalias() += rh.transpose() * da_c;
        grad.bias_h += da_c.transpose();
        const RowVector<Scalar> d_rh = da_c * p.recurrent_h.transpose();
        const RowVector<Scalar> da_r = d_rh.cwiseProduct(h_prev).cwiseProduct(r).cwiseProduct(ones - r);
        dh_prev += d_rh.cwiseProduct(r);

        grad.kernel_z.noalias() += x.transpose() * da_z;
        grad.recurrent_z.noalias() += h_prev.transpose() * da_z;
        grad.bias_z += da_z.transpose();
        grad.kernel_r.noalias() += x.transpose() * da_r;
        grad.recurrent_r.noalias() += h_prev.transpose() * da_r;
        grad.bias_r += da_r.transpose();

        dh_prev.noalias() += da_z * p.recurrent_z.transpose() + da_r * p.recurrent_r.transpose();
        d_inputs.row(s).noalias() =
            da_z * p.kernel_z.transpose() + da_r * p.kernel_r.transpose() + da_c * p.kernel_h.transpose();
        d_carry = dh_prev;
    }
    return d_inputs;
}

// ---------------------------------------------------------------------------
// Output head

template <typename Scalar>
Vector<Scalar> softmax(const Eigen::Ref<const Vector<Scalar>>& logits) {
    if (!logits.allFinite()) throw InvalidArgument("softmax: non-finite logits");
    const Vector<Scalar> e = (logits.array() - logits.maxCoeff()).exp().matrix();
    return e / e.sum();
}

template <typename Scalar>
Scalar sparse_ce(const Eigen::Ref<const Vector<Scalar>>& probs, int label) {
    if (label < 0 || label >= probs.size()) throw InvalidArgument("sparse_ce: label index out of range");
    return -std::log(std::max(probs(label), static_cast<Scalar>(kLossEpsilon)));
}

template <typename Scalar>
Scalar sparse_ce(const Eigen::Ref<const Vector<Scalar>>& probs, Label label) {
    return sparse_ce<Scalar>(probs, class_index(label));
}

/// d(sparse_ce(softmax(logits), label)) / d logits = probs - onehot(label).
template <typename Scalar>
Vector<Scalar> softmax_ce_logit_gradient(const Eigen::Ref<const Vector<Scalar>>& probs, Label label) {
    Vector<Scalar> g = probs;
    g(class_index(label)) -= Scalar(1);
    return g;
}

template <typename Scalar>
Vector<Scalar> sample_dropout_mask(Index size, Scalar rate, Rng& rng) {
    std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
    const Scalar scale = Scalar(1) / (Scalar(1) - rate);
    Vector<Scalar> mask(size);
    for (Index i = 0; i < size; ++i) mask(i) = keep(rng) ? scale : Scalar(0);
    return mask;
}

template <typename Scalar>
struct ForwardTrace {
    GruTrace<Scalar> gru1, gru2;
    Vector<Scalar> dropout_mask;  // empty in eval mode
    Vector<Scalar> dropped;       // gru2 final state after dropout
    Vector<Scalar> dense_pre;
    Vector<Scalar> dense_out;
    Vector<Scalar> logits;
    Vector<Scalar> probs;
};

/// Forward pass. An empty `dropout_mask` is eval mode (dropout is the
/// identity); otherwise the mask multiplies gru2's final state and already
/// carries the 1/(1 - rate) scaling.
template <typename Scalar>
Vector<Scalar> forward(const NetworkParams<Scalar>& net, const Matrix<Scalar>& features,
                       const Vector<Scalar>& dropout_mask = {}, ForwardTrace<Scalar>* trace = nullptr) {
    if (features.cols() != net.gru1.input_dim())
        throw ShapeError("forward: feature width " + std::to_string(features.cols()) + " does not match network input " +
                         std::to_string(net.gru1.input_dim()));
    ForwardTrace<Scalar> local;
    ForwardTrace<Scalar>& t = trace ? *trace : local;
    t.gru1 = gru_trace(net.gru1, features);
    t.gru2 = gru_trace(net.gru2, t.gru1.h);
    const Vector<Scalar> state = t.gru2.h.row(t.gru2.h.rows() - 1).transpose();
    if (dropout_mask.size() == 0) {
        t.dropout_mask.resize(0);
        t.dropped = state;
    } else {
        if (dropout_mask.size() != state.size()) throw ShapeError("forward: dropout mask size mismatch");
        t.dropout_mask = dropout_mask;
        t.dropped = state.cwiseProduct(dropout_mask);
    }
    t.dense_pre = net.dense1_kernel.transpose() * t.dropped + net.dense1_bias;
    t.dense_out = t.dense_pre.cwiseMax(Scalar(0));
    t.logits = net.dense2_kernel.transpose() * t.dense_out + net.dense2_bias;
    t.probs = softmax<Scalar>(t.logits);
    return t.probs;
}

enum class Mode { train, eval };

/// Convenience overload: train mode samples a fresh dropout mask from `rng`.
template <typename Scalar>
Vector<Scalar> forward(const NetworkParams<Scalar>& net, const Matrix<Scalar>& features, Mode mode, Rng& rng,
                       ForwardTrace<Scalar>* trace = nullptr) {
    if (mode == Mode::eval || net.dropout_rate == Scalar(0)) return forward(net, features, Vector<Scalar>{}, trace);
    return forward(net, features, sample_dropout_mask(net.gru2.hidden_dim(), net.dropout_rate, rng), trace);
}

// ---------------------------------------------------------------------------
// Gradients

template <typename Scalar>
struct LabeledSequence {
    Matrix<Scalar> features;  // T x D
    Label label = Label::irrelevant;
};

template <typename Scalar>
struct GradientResult {
    NetworkParams<Scalar> grad;
    Scalar loss = 0;  // mean over the batch
};

/// Reverse-mode gradient of the mean batch loss. `masks` is either empty
/// (dropout off) or holds one dropout mask per batch item.
template <typename Scalar>
GradientResult<Scalar> gradients(const NetworkParams<Scalar>& net, std::span<const LabeledSequence<Scalar>> batch,
                                 std::span<const Vector<Scalar>> masks = {}) {
    if (batch.empty()) throw InvalidArgument("gradients: empty batch");
    if (!masks.empty() && masks.size() != batch.size()) throw InvalidArgument("gradients: one dropout mask per item");
    net.check();

    GradientResult<Scalar> out{NetworkParams<Scalar>::zeros(net.shape()), Scalar(0)};
    NetworkParams<Scalar>& g = out.grad;
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(batch.size());
    ForwardTrace<Scalar> t;

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& item = batch[i];
        forward(net, item.features, masks.empty() ? Vector<Scalar>{} : masks[i], &t);
        out.loss += sparse_ce<Scalar>(t.probs, item.label) * inv_n;

        const Vector<Scalar> d_logits = softmax_ce_logit_gradient<Scalar>(t.probs, item.label) * inv_n;
        g.dense2_kernel.noalias() += t.dense_out * d_logits.transpose();
        g.dense2_bias += d_logits;
        const Vector<Scalar> d_dense_out = net.dense2_kernel * d_logits;
        const Vector<Scalar> d_dense_pre =
            (t.dense_pre.array() > Scalar(0)).select(d_dense_out, Vector<Scalar>::Zero(d_dense_out.size()));
        g.dense1_kernel.noalias() += t.dropped * d_dense_pre.transpose();
        g.dense1_bias += d_dense_pre;
        Vector<Scalar> d_state = net.dense1_kernel * d_dense_pre;
        if (t.dropout_mask.size() != 0) d_state = d_state.cwiseProduct(t.dropout_mask);

        const Index steps = t.gru2.h.rows();
        Matrix<Scalar> d_h2 = Matrix<Scalar>::Zero(steps, net.gru2.hidden_dim());
        d_h2.row(steps - 1) = d_state.transpose();
        const Matrix<Scalar> d_h1 = gru_backward(net.gru2, t.gru2, d_h2, g.gru2);
        gru_backward(net.gru1, t.gru1, d_h1, g.gru1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
    int epochs = 30;
    int batch_size = 16;
    std::uint64_t seed = 0;
    bool dropout = true;  // false trains with dropout disabled

    void check() const {
        if (!(learning_rate >= 0.0)) throw InvalidArgument("learning_rate must be >= 0");
        if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
        if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw InvalidArgument("moment decay rates must lie in [0, 1)");
        if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be > 0");
    }
};

template <typename Scalar>
struct AdamState {
    NetworkParams<Scalar> first, second;
    long step = 0;

    explicit AdamState(const NetworkShape& s)
        : first(NetworkParams<Scalar>::zeros(s)), second(NetworkParams<Scalar>::zeros(s)) {}
};

template <typename Scalar>
void adam_step(NetworkParams<Scalar>& net, const NetworkParams<Scalar>& grad, AdamState<Scalar>& state,
               const TrainConfig& cfg) {
    ++state.step;
    const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
    const Scalar bias1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(state.step));
    const Scalar bias2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(state.step));
    const Scalar lr = static_cast<Scalar>(cfg.learning_rate), eps = static_cast<Scalar>(cfg.epsilon);
    for_each_block(
        [&](std::string_view, auto& w, const auto& g, auto& m, auto& v) {
            m = b1 * m + (Scalar(1) - b1) * g;
            v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
            w.array() -= lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + eps);
        },
        net, grad, state.first, state.second);
}

template <typename Scalar>
struct TrainResult {
    NetworkParams<Scalar> params;
    std::vector<double> loss_history;  // mean training loss per epoch
};

/// Mini-batch Adam. Initialization, shuffling, and dropout masks each draw
/// from their own stream derived from cfg.seed, so a run is reproducible.
template <typename Scalar>
TrainResult<Scalar> train(std::span<const LabeledSequence<Scalar>> data, const TrainConfig& cfg, NetworkShape shape) {
    cfg.check();
    if (data.empty()) throw InvalidArgument("train: empty dataset");
    const Index width = data.front().features.cols();
    for (const auto& item : data) {
        if (item.features.cols() != width) throw ShapeError("train: inconsistent feature dimensions");
        if (item.features.rows() < 1) throw ShapeError("train: empty feature sequence");
    }
    shape.input_dim = width;

    Rng init_rng = make_rng(cfg.seed, "init");
    Rng shuffle_rng = make_rng(cfg.seed, "shuffle");
    Rng dropout_rng = make_rng(cfg.seed, "dropout");

    TrainResult<Scalar> result{initialize<Scalar>(shape, init_rng), {}};
    NetworkParams<Scalar>& net = result.params;
    AdamState<Scalar> adam(shape);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<LabeledSequence<Scalar>> batch;
    std::vector<Vector<Scalar>> masks;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            masks.clear();
            for (std::size_t k = begin; k < end; ++k) {
                batch.push_back(data[order[k]]);
                if (cfg.dropout && net.dropout_rate > Scalar(0))
                    masks.push_back(sample_dropout_mask(shape.gru2, net.dropout_rate, dropout_rng));
            }
            const GradientResult<Scalar> g = gradients<Scalar>(net, batch, masks);
            epoch_loss += static_cast<double>(g.loss) * static_cast<double>(end - begin);
            adam_step(net, g.grad, adam, cfg);
        }
        result.loss_history.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Prediction

struct Prediction {
    std::array<double, kNumClasses> probs{};
    Label label = Label::relevant;
    double confidence = 0.0;
};

/// Picks the more probable class; an exact tie goes to relevant.
inline Prediction decide(double p_irrelevant, double p_relevant) {
    Prediction p;
    p.probs = {p_irrelevant, p_relevant};
    p.label = p_relevant >= p_irrelevant ? Label::relevant : Label::irrelevant;
    p.confidence = p.probs[class_index(p.label)];
    return p;
}

template <typename Scalar>
Prediction predict(const NetworkParams<Scalar>& net, const Matrix<Scalar>& features) {
    const Vector<Scalar> probs = forward(net, features);
    return decide(static_cast<double>(probs(0)), static_cast<double>(probs(1)));
}

}  // namespace whalesift::seq
