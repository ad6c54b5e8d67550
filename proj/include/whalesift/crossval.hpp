#pragma once

// k-fold cross-validation of the sequence classifier over cached features.

#include <cstdint>
#include <string>
#include <vector>

#include "whalesift/evaluation.hpp"
#include "whalesift/seqclassifier.hpp"

namespace whalesift::eval {

struct Example {
    std::string local_id;
    Label label = Label::irrelevant;
    seq::Matrix<double> features;  // T x D
};

struct HeldOutPrediction {
    std::string local_id;
    int fold = 0;
    Label truth = Label::irrelevant;
    seq::Prediction prediction;
};

struct CrossValOptions {
    int k = 5;
    std::uint64_t seed = 0;  // expands into the fold split and one training seed per fold
    seq::TrainConfig train;  // train.seed is ignored
    seq::NetworkShape shape;
    int threads = 1;         // folds trained concurrently
};

struct CrossValResult {
    FoldSpec folds;
    std::vector<ConfusionMatrix> matrices;
    CVSummary summary;
    std::vector<HeldOutPrediction> predictions;  // fold order, then input order
};

/// Training seed for fold `fold` under top-level `seed`.
std::uint64_t fold_train_seed(std::uint64_t seed, int fold);

/// Splits with stratified_folds, trains one network per fold on the other
/// k-1 folds, and scores it on the held-out fold. Results do not depend on
/// `threads`.
CrossValResult cross_validate(const std::vector<Example>& data, const CrossValOptions& options);

}  // namespace whalesift::eval
