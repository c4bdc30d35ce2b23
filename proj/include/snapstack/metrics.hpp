#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace snapstack {

// Row = true class, column = predicted class.
struct ConfusionMatrix {
    std::size_t class_count = 0;
    std::vector<std::uint64_t> counts;  // class_count^2, row-major

    std::uint64_t at(std::size_t true_cls, std::size_t pred_cls) const;
    std::uint64_t total() const;

    struct OneVsRest {
        std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    };
    OneVsRest one_vs_rest(std::size_t cls) const;
};

ConfusionMatrix confusion(const std::vector<int>& true_labels,
                          const std::vector<int>& predicted_labels, std::size_t class_count);

// One-vs-rest rates per class. Cells whose denominator is zero are left
// unset and excluded from the macro mean (a warning is recorded instead of
// silently deflating it).
struct ClassMetrics {
    std::optional<double> accuracy;     // (TP+TN)/(TP+TN+FP+FN)
    std::optional<double> ppv;          // TP/(TP+FP)
    std::optional<double> sensitivity;  // TP/(TP+FN)
    std::optional<double> specificity;  // TN/(TN+FP)
    std::optional<double> f1;           // 2TP/(2TP+FP+FN)
};

struct RatesReport {
    std::vector<ClassMetrics> per_class;
    ClassMetrics macro;             // mean over classes with defined cells
    double overall_accuracy = 0.0;  // trace/total (the headline number)
    std::vector<std::string> warnings;
};

RatesReport compute_rates(const ConfusionMatrix& cm);

// Normal-approximation binomial half-width z*sqrt(e(1-e)/n) at the given
// confidence (z = 1.959964 at 95%).
double error_ci_half_width(double error_rate, std::size_t n, double confidence = 0.95);

// ROC by sweeping thresholds over the distinct scores (descending); AUC by
// the rank-sum formulation, so tied scores count one half. scores[i][c] is
// sample i's score for class c.
struct RocCurve {
    std::vector<std::pair<double, double>> points;  // (FPR, TPR), (0,0) .. (1,1)
    double auc = 0.0;
};

struct RocReport {
    std::vector<RocCurve> per_class;
    double macro_auc = 0.0;
};

RocReport roc_auc(const std::vector<int>& true_labels,
                  const std::vector<std::vector<double>>& scores);

// One-vs-rest AUC of a binary problem via pair counting; the building block
// of roc_auc, exposed for reuse.
double binary_auc(const std::vector<int>& true_labels, const std::vector<double>& scores,
                  int positive_class);

// Percentile-bootstrap half-width of the macro AUC, resampling indices
// within each class so every class stays represented.
double auc_ci_half_width(const std::vector<int>& true_labels,
                         const std::vector<std::vector<double>>& scores, std::size_t resamples,
                         std::uint64_t seed);

}  // namespace snapstack
