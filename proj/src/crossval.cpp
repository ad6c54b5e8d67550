#include "whalesift/crossval.hpp"

#include <atomic>
#include <exception>
#include <map>
#include <thread>

#include "whalesift/rng.hpp"

namespace whalesift::eval {

std::uint64_t fold_train_seed(std::uint64_t seed, int fold) {
    return derive_seed(seed, "train/fold-" + std::to_string(fold));
}

CrossValResult cross_validate(const std::vector<Example>& data, const CrossValOptions& options) {
    if (options.threads < 1) throw InvalidArgument("threads must be >= 1");
    std::map<std::string, Label> labels;
    for (const auto& e : data)
        if (!labels.emplace(e.local_id, e.label).second) throw DuplicateIdError(e.local_id);

    CrossValResult result;
    result.folds = stratified_folds(labels, options.k, derive_seed(options.seed, "folds"));
    const int k = options.k;

    std::vector<FoldReport> reports(static_cast<std::size_t>(k));
    std::vector<ConfusionMatrix> matrices(static_cast<std::size_t>(k));
    std::vector<std::vector<HeldOutPrediction>> held(static_cast<std::size_t>(k));
    std::vector<std::exception_ptr> failures(static_cast<std::size_t>(k));

    auto run_fold = [&](int fold) {
        std::vector<seq::LabeledSequence<double>> train_set;
        std::vector<const Example*> test_set;
        for (const auto& e : data) {
            if (result.folds.assignment.at(e.local_id) == fold) test_set.push_back(&e);
            else train_set.push_back({e.features, e.label});
        }
        seq::TrainConfig cfg = options.train;
        cfg.seed = fold_train_seed(options.seed, fold);
        const auto trained = seq::train<double>(train_set, cfg, options.shape);

        std::vector<Label> truths, preds;
        auto& out = held[static_cast<std::size_t>(fold)];
        for (const Example* e : test_set) {
            const seq::Prediction p = seq::predict(trained.params, e->features);
            truths.push_back(e->label);
            preds.push_back(p.label);
            out.push_back({e->local_id, fold, e->label, p});
        }
        matrices[static_cast<std::size_t>(fold)] = confusion(preds, truths);
        reports[static_cast<std::size_t>(fold)] = metrics(matrices[static_cast<std::size_t>(fold)], fold);
    };

    std::atomic<int> next{0};
    auto worker = [&]() {
        for (int fold = next++; fold < k; fold = next++) {
            try {
                run_fold(fold);
            } catch (...) {
                failures[static_cast<std::size_t>(fold)] = std::current_exception();
            }
        }
    };
    const int n_threads = std::min(options.threads, k);
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (const auto& f : failures)
        if (f) std::rethrow_exception(f);

    result.matrices = std::move(matrices);
    result.summary = average(reports);
    for (auto& fold : held)
        for (auto& p : fold) result.predictions.push_back(std::move(p));
    return result;
}

}  // namespace whalesift::eval
