#include "whalesift/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "whalesift/error.hpp"
#include "whalesift/rng.hpp"

namespace whalesift::eval {

std::vector<std::string> FoldSpec::members(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : assignment)
        if (f == fold) out.push_back(id);
    return out;
}

FoldSpec stratified_folds(const std::map<std::string, Label>& labels, int k, std::uint64_t seed) {
    if (k < 2) throw InvalidArgument("fold count must be at least 2");
    std::array<std::vector<std::string>, kNumClasses> by_class;
    for (const auto& [id, label] : labels) by_class[static_cast<std::size_t>(class_index(label))].push_back(id);
    for (int c = 0; c < kNumClasses; ++c)
        if (static_cast<int>(by_class[static_cast<std::size_t>(c)].size()) < k)
            throw InvalidArgument("class '" + std::string(to_string(static_cast<Label>(c))) + "' has " +
                                  std::to_string(by_class[static_cast<std::size_t>(c)].size()) + " items, fewer than " +
                                  std::to_string(k) + " folds");

    FoldSpec spec;
    spec.k = k;
    spec.seed = seed;
    Rng rng = make_rng(seed, "folds");
    int cursor = 0;
    for (auto& ids : by_class) {
        std::shuffle(ids.begin(), ids.end(), rng);
        for (const auto& id : ids) {
            spec.assignment[id] = cursor;
            cursor = (cursor + 1) % k;
        }
    }
    return spec;
}

std::int64_t ConfusionMatrix::total() const noexcept {
    std::int64_t t = 0;
    for (const auto& row : counts)
        for (auto v : row) t += v;
    return t;
}

std::int64_t ConfusionMatrix::row_sum(int c) const noexcept {
    const auto& row = counts[static_cast<std::size_t>(c)];
    return row[0] + row[1];
}

std::int64_t ConfusionMatrix::column_sum(int c) const noexcept {
    return counts[0][static_cast<std::size_t>(c)] + counts[1][static_cast<std::size_t>(c)];
}

ConfusionMatrix confusion(std::span<const Label> predictions, std::span<const Label> truths) {
    if (predictions.size() != truths.size())
        throw InvalidArgument("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                              std::to_string(truths.size()) + " truths");
    if (truths.empty()) throw InvalidArgument("confusion: empty input");
    ConfusionMatrix m;
    for (std::size_t i = 0; i < truths.size(); ++i)
        ++m.counts[static_cast<std::size_t>(class_index(truths[i]))][static_cast<std::size_t>(class_index(predictions[i]))];
    return m;
}

namespace {

double ratio(std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

FoldReport metrics(const ConfusionMatrix& m, int fold) {
    const std::int64_t total = m.total();
    if (total <= 0) throw InvalidArgument("metrics: empty confusion matrix");
    FoldReport r;
    r.fold = fold;
    r.accuracy = ratio(m.counts[0][0] + m.counts[1][1], total);
    for (int c = 0; c < kNumClasses; ++c) {
        const auto i = static_cast<std::size_t>(c);
        const std::int64_t hit = m.counts[i][i];
        r.precision[i] = ratio(hit, m.column_sum(c));
        r.recall[i] = ratio(hit, m.row_sum(c));
        const double pr = r.precision[i] + r.recall[i];
        r.f1[i] = pr == 0.0 ? 0.0 : 2.0 * r.precision[i] * r.recall[i] / pr;
    }
    return r;
}

CVSummary average(std::span<const FoldReport> reports) {
    if (reports.empty()) throw InvalidArgument("average: no fold reports");
    CVSummary s;
    s.folds.assign(reports.begin(), reports.end());
    const double n = static_cast<double>(reports.size());
    FoldReport& a = s.average;
    a.fold = -1;
    for (const auto& r : reports) {
        a.accuracy += r.accuracy / n;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            a.precision[c] += r.precision[c] / n;
            a.recall[c] += r.recall[c] / n;
            a.f1[c] += r.f1[c] / n;
        }
    }
    return s;
}

ReportFormat parse_report_format(std::string_view name) {
    if (name.empty() || name == "text" || name == "txt") return ReportFormat::text;
    if (name == "csv") return ReportFormat::csv;
    throw InvalidArgument("unknown report format '" + std::string(name) + "'");
}

namespace {

std::string one_decimal(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

std::string pair(const std::array<double, kNumClasses>& v) { return one_decimal(v[0]) + "/" + one_decimal(v[1]); }

void text_row(std::ostringstream& out, const std::string& fold, const FoldReport& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "| %-7s | %8s | %-11s | %-11s | %-11s |\n", fold.c_str(), one_decimal(r.accuracy).c_str(),
                  pair(r.precision).c_str(), pair(r.recall).c_str(), pair(r.f1).c_str());
    out << buf;
}

void csv_row(std::ostringstream& out, const std::string& fold, const FoldReport& r) {
    out << fold << ',' << one_decimal(r.accuracy);
    for (const auto* v : {&r.precision, &r.recall, &r.f1}) out << ',' << one_decimal((*v)[0]) << ',' << one_decimal((*v)[1]);
    out << '\n';
}

}  // namespace

std::string render_report(const CVSummary& summary, ReportFormat format) {
    std::ostringstream out;
    if (format == ReportFormat::csv) {
        out << "fold,accuracy,precision_irr,precision_rel,recall_irr,recall_rel,f1_irr,f1_rel\n";
        for (const auto& r : summary.folds) csv_row(out, std::to_string(r.fold + 1), r);
        csv_row(out, "average", summary.average);
        return out.str();
    }
    const std::string rule = "+---------+----------+-------------+-------------+-------------+\n";
    out << rule << "| Fold    | Accuracy | Precision   | Recall      | F1 Score    |\n" << rule;
    for (const auto& r : summary.folds) text_row(out, std::to_string(r.fold + 1), r);
    out << rule;
    text_row(out, "Average", summary.average);
    out << rule << "Precision, recall and F1 are given as irrelevant/relevant.\n";
    return out.str();
}

std::vector<FoldReport> parse_csv_report(std::string_view csv) {
    std::istringstream in{std::string(csv)};
    std::string line;
    std::vector<FoldReport> out;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            header = false;
            if (line.rfind("fold,", 0) == 0) continue;
        }
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 8) throw InvalidArgument("report row needs 8 columns: '" + line + "'");
        if (cells[0] == "average") continue;
        try {
            FoldReport r;
            r.fold = std::stoi(cells[0]) - 1;
            r.accuracy = std::stod(cells[1]);
            r.precision = {std::stod(cells[2]), std::stod(cells[3])};
            r.recall = {std::stod(cells[4]), std::stod(cells[5])};
            r.f1 = {std::stod(cells[6]), std::stod(cells[7])};
            out.push_back(r);
        } catch (const std::logic_error&) {
            throw InvalidArgument("unparseable report row: '" + line + "'");
        }
    }
    return out;
}

}  // namespace whalesift::eval
