#pragma once

// Finite-difference oracle for the classifier head. Only forward() and
// sparse_ce() are used here, never the analytic backward pass.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "whalesift/seqclassifier.hpp"

namespace whalesift::testing {

using seq::LabeledSequence;
using seq::NetworkParams;
using seq::NetworkShape;

inline double batch_loss(const NetworkParams<double>& net, std::span<const LabeledSequence<double>> batch) {
    double loss = 0.0;
    for (const auto& item : batch) loss += seq::sparse_ce<double>(seq::forward(net, item.features), item.label);
    return loss / static_cast<double>(batch.size());
}

/// Every parameter drawn N(0, scale^2): biases included, so no path is
/// trivially dead.
inline NetworkParams<double> random_network(const NetworkShape& s, Rng& rng, double scale = 0.5) {
    auto net = NetworkParams<double>::zeros(s);
    std::normal_distribution<double> dist(0.0, scale);
    seq::for_each_block([&](std::string_view, auto& b) { b = b.unaryExpr([&](double) { return dist(rng); }); }, net);
    return net;
}

inline std::vector<LabeledSequence<double>> random_batch(std::size_t n, Eigen::Index steps, Eigen::Index width, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    std::vector<LabeledSequence<double>> out(n);
    for (auto& item : out) {
        item.features = seq::Matrix<double>::NullaryExpr(steps, width, [&]() { return dist(rng); });
        item.label = coin(rng) ? Label::relevant : Label::irrelevant;
    }
    return out;
}

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_block;
    Eigen::Index parameters = 0;
};

/// Relative error per parameter: |a - n| / max(|a|, |n|, floor). The floor
/// only matters for gradients whose magnitude is below it, where central
/// differences are dominated by rounding.
inline constexpr double kGradCheckFloor = 1e-7;

inline GradCheckResult gradient_check(const NetworkParams<double>& net, std::span<const LabeledSequence<double>> batch,
                                      double step = 1e-5) {
    const auto analytic = seq::gradients<double>(net, batch).grad;
    NetworkParams<double> probe = net;
    GradCheckResult r;
    seq::for_each_block(
        [&](std::string_view name, auto& w, const auto& g) {
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                double& slot = w.reshaped()(i);
                const double saved = slot;
                slot = saved + step;
                const double up = batch_loss(probe, batch);
                slot = saved - step;
                const double down = batch_loss(probe, batch);
                slot = saved;
                const double numeric = (up - down) / (2.0 * step);
                const double a = g.reshaped()(i);
                const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
                ++r.parameters;
                if (rel > r.max_relative_error) {
                    r.max_relative_error = rel;
                    r.worst_block = std::string(name) + "[" + std::to_string(i) + "]";
                }
            }
        },
        probe, analytic);
    return r;
}

}  // namespace whalesift::testing
