#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "whalesift/corpus.hpp"

namespace whalesift::eval {

struct FoldSpec {
    int k = 5;
    std::uint64_t seed = 0;
    std::map<std::string, int> assignment;  // local_id -> fold in [0, k)

    std::vector<std::string> members(int fold) const;
};

/// Each class is shuffled by `seed` and dealt round-robin into the folds;
/// the dealing position carries over from one class to the next so total
/// fold sizes also differ by at most one. Classes are dealt irrelevant first.
FoldSpec stratified_folds(const std::map<std::string, Label>& labels, int k, std::uint64_t seed);

/// counts[truth][predicted], order [irrelevant, relevant].
struct ConfusionMatrix {
    std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

    std::int64_t total() const noexcept;
    std::int64_t row_sum(int c) const noexcept;
    std::int64_t column_sum(int c) const noexcept;
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const Label> predictions, std::span<const Label> truths);

/// Per-class pairs are in [irrelevant, relevant] order. All values are
/// percentages, unrounded.
struct FoldReport {
    int fold = 0;
    double accuracy = 0.0;
    std::array<double, kNumClasses> precision{};
    std::array<double, kNumClasses> recall{};
    std::array<double, kNumClasses> f1{};
};

/// A 0/0 denominator yields 0 for that metric.
FoldReport metrics(const ConfusionMatrix& m, int fold = 0);

struct CVSummary {
    std::vector<FoldReport> folds;
    FoldReport average;
};

CVSummary average(std::span<const FoldReport> reports);

enum class ReportFormat { text, csv };

ReportFormat parse_report_format(std::string_view name);  // "" -> text
std::string render_report(const CVSummary& summary, ReportFormat format);

/// Reads the fold rows of a CSV report (the average row is ignored).
std::vector<FoldReport> parse_csv_report(std::string_view csv);

}  // namespace whalesift::eval
