#include "snapstack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "snapstack/rng.hpp"

namespace snapstack {

std::uint64_t ConfusionMatrix::at(std::size_t true_cls, std::size_t pred_cls) const {
    if (true_cls >= class_count || pred_cls >= class_count)
        throw std::out_of_range("confusion matrix index out of range");
    return counts[true_cls * class_count + pred_cls];
}

std::uint64_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

ConfusionMatrix::OneVsRest ConfusionMatrix::one_vs_rest(std::size_t cls) const {
    OneVsRest r;
    for (std::size_t t = 0; t < class_count; ++t)
        for (std::size_t p = 0; p < class_count; ++p) {
            const std::uint64_t n = counts[t * class_count + p];
            if (t == cls && p == cls)
                r.tp += n;
            else if (t == cls)
                r.fn += n;
            else if (p == cls)
                r.fp += n;
            else
                r.tn += n;
        }
    return r;
}

ConfusionMatrix confusion(const std::vector<int>& true_labels,
                          const std::vector<int>& predicted_labels, std::size_t class_count) {
    if (true_labels.size() != predicted_labels.size())
        throw std::invalid_argument("label vectors differ in length");
    ConfusionMatrix cm;
    cm.class_count = class_count;
    cm.counts.assign(class_count * class_count, 0);
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        const int t = true_labels[i], p = predicted_labels[i];
        if (t < 0 || static_cast<std::size_t>(t) >= class_count || p < 0 ||
            static_cast<std::size_t>(p) >= class_count)
            throw std::invalid_argument("label out of range at sample " + std::to_string(i));
        ++cm.counts[static_cast<std::size_t>(t) * class_count + p];
    }
    return cm;
}

namespace {
std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

RatesReport compute_rates(const ConfusionMatrix& cm) {
    if (cm.class_count == 0 || cm.total() == 0)
        throw std::invalid_argument("confusion matrix is empty");
    RatesReport report;
    report.per_class.resize(cm.class_count);

    for (std::size_t c = 0; c < cm.class_count; ++c) {
        const auto ovr = cm.one_vs_rest(c);
        auto& m = report.per_class[c];
        m.accuracy = ratio(ovr.tp + ovr.tn, ovr.tp + ovr.tn + ovr.fp + ovr.fn);
        m.ppv = ratio(ovr.tp, ovr.tp + ovr.fp);
        m.sensitivity = ratio(ovr.tp, ovr.tp + ovr.fn);
        m.specificity = ratio(ovr.tn, ovr.tn + ovr.fp);
        m.f1 = ratio(2 * ovr.tp, 2 * ovr.tp + ovr.fp + ovr.fn);

        const auto warn = [&](const char* name, const std::optional<double>& v) {
            if (!v) {
                std::ostringstream msg;
                msg << name << " undefined for class " << c
                    << " (zero denominator); excluded from the macro mean";
                report.warnings.push_back(msg.str());
            }
        };
        warn("ppv", m.ppv);
        warn("sensitivity", m.sensitivity);
        warn("specificity", m.specificity);
        warn("f1", m.f1);
        warn("accuracy", m.accuracy);
    }

    const auto macro_of = [&](auto getter) -> std::optional<double> {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& m : report.per_class)
            if (const auto v = getter(m)) {
                sum += *v;
                ++n;
            }
        if (n == 0) return std::nullopt;
        return sum / static_cast<double>(n);
    };
    report.macro.accuracy = macro_of([](const ClassMetrics& m) { return m.accuracy; });
    report.macro.ppv = macro_of([](const ClassMetrics& m) { return m.ppv; });
    report.macro.sensitivity = macro_of([](const ClassMetrics& m) { return m.sensitivity; });
    report.macro.specificity = macro_of([](const ClassMetrics& m) { return m.specificity; });
    report.macro.f1 = macro_of([](const ClassMetrics& m) { return m.f1; });

    std::uint64_t trace = 0;
    for (std::size_t c = 0; c < cm.class_count; ++c) trace += cm.at(c, c);
    report.overall_accuracy = static_cast<double>(trace) / static_cast<double>(cm.total());
    return report;
}

double error_ci_half_width(double error_rate, std::size_t n, double confidence) {
    if (error_rate < 0.0 || error_rate > 1.0)
        throw std::invalid_argument("error rate must be in [0, 1]");
    if (n < 1) throw std::invalid_argument("sample count must be >= 1");
    double z;
    if (std::abs(confidence - 0.95) < 1e-12) {
        z = 1.959964;
    } else if (std::abs(confidence - 0.99) < 1e-12) {
        z = 2.575829;
    } else if (std::abs(confidence - 0.90) < 1e-12) {
        z = 1.644854;
    } else {
        throw std::invalid_argument("unsupported confidence level");
    }
    return z * std::sqrt(error_rate * (1.0 - error_rate) / static_cast<double>(n));
}

double binary_auc(const std::vector<int>& true_labels, const std::vector<double>& scores,
                  int positive_class) {
    if (true_labels.size() != scores.size())
        throw std::invalid_argument("labels/scores differ in length");
    for (double s : scores)
        if (!std::isfinite(s)) throw std::invalid_argument("scores must be finite");

    // Sort by score; walk tie groups, crediting positives with the count of
    // lower-scored negatives plus half the tied ones. Equals the O(n^2)
    // pairwise count exactly.
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return a < b;
    });

    std::uint64_t pos_total = 0, neg_total = 0;
    for (int l : true_labels)
        l == positive_class ? ++pos_total : ++neg_total;
    if (pos_total == 0 || neg_total == 0)
        throw std::invalid_argument("AUC needs at least one positive and one negative");

    double u = 0.0;  // sums of integers and halves; exact in double here
    std::uint64_t negatives_below = 0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        std::uint64_t tie_pos = 0, tie_neg = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            true_labels[idx[j]] == positive_class ? ++tie_pos : ++tie_neg;
            ++j;
        }
        u += static_cast<double>(tie_pos) * (static_cast<double>(negatives_below) +
                                             0.5 * static_cast<double>(tie_neg));
        negatives_below += tie_neg;
        i = j;
    }
    return u / (static_cast<double>(pos_total) * static_cast<double>(neg_total));
}

namespace {
RocCurve binary_roc(const std::vector<int>& true_labels, const std::vector<double>& scores,
                    int positive_class) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });

    std::uint64_t pos_total = 0, neg_total = 0;
    for (int l : true_labels)
        l == positive_class ? ++pos_total : ++neg_total;

    RocCurve curve;
    curve.points.emplace_back(0.0, 0.0);
    std::uint64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            true_labels[idx[j]] == positive_class ? ++tp : ++fp;
            ++j;
        }
        curve.points.emplace_back(static_cast<double>(fp) / static_cast<double>(neg_total),
                                  static_cast<double>(tp) / static_cast<double>(pos_total));
        i = j;
    }
    curve.auc = binary_auc(true_labels, scores, positive_class);
    return curve;
}
}  // namespace

RocReport roc_auc(const std::vector<int>& true_labels,
                  const std::vector<std::vector<double>>& scores) {
    if (true_labels.size() != scores.size())
        throw std::invalid_argument("labels/scores differ in length");
    if (true_labels.empty()) throw std::invalid_argument("no samples");
    const std::size_t class_count = scores.front().size();
    for (const auto& row : scores)
        if (row.size() != class_count)
            throw std::invalid_argument("score rows differ in width");

    std::vector<std::uint64_t> present(class_count, 0);
    for (int l : true_labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= class_count)
            throw std::invalid_argument("label out of range");
        ++present[l];
    }
    for (std::size_t c = 0; c < class_count; ++c)
        if (present[c] == 0)
            throw std::invalid_argument("class " + std::to_string(c) +
                                        " is absent from the true labels");

    RocReport report;
    report.per_class.resize(class_count);
    double sum = 0.0;
    for (std::size_t c = 0; c < class_count; ++c) {
        std::vector<double> class_scores(true_labels.size());
        for (std::size_t i = 0; i < true_labels.size(); ++i) class_scores[i] = scores[i][c];
        report.per_class[c] = binary_roc(true_labels, class_scores, static_cast<int>(c));
        sum += report.per_class[c].auc;
    }
    report.macro_auc = sum / static_cast<double>(class_count);
    return report;
}

double auc_ci_half_width(const std::vector<int>& true_labels,
                         const std::vector<std::vector<double>>& scores, std::size_t resamples,
                         std::uint64_t seed) {
    if (resamples < 100) throw std::invalid_argument("need at least 100 bootstrap resamples");
    const std::size_t class_count = scores.empty() ? 0 : scores.front().size();
    std::vector<std::vector<std::size_t>> by_class(class_count);
    for (std::size_t i = 0; i < true_labels.size(); ++i)
        by_class.at(true_labels[i]).push_back(i);

    std::vector<double> macro_aucs(resamples);
#pragma omp parallel for schedule(dynamic)
    for (long long r = 0; r < static_cast<long long>(resamples); ++r) {
        Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(r));
        std::vector<int> labels;
        std::vector<std::vector<double>> sampled;
        labels.reserve(true_labels.size());
        sampled.reserve(true_labels.size());
        // Stratified: resample within each class, so no class goes missing.
        for (std::size_t c = 0; c < class_count; ++c)
            for (std::size_t k = 0; k < by_class[c].size(); ++k) {
                const std::size_t pick = by_class[c][rng.below(by_class[c].size())];
                labels.push_back(true_labels[pick]);
                sampled.push_back(scores[pick]);
            }
        macro_aucs[static_cast<std::size_t>(r)] = roc_auc(labels, sampled).macro_auc;
    }

    std::sort(macro_aucs.begin(), macro_aucs.end());
    const auto percentile = [&](double q) {
        const double pos = q * static_cast<double>(macro_aucs.size() - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, macro_aucs.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return macro_aucs[lo] * (1.0 - frac) + macro_aucs[hi] * frac;
    };
    return (percentile(0.975) - percentile(0.025)) / 2.0;
}

}  // namespace snapstack
