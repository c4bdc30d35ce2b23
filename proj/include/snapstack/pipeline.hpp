#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "snapstack/data.hpp"
#include "snapstack/image.hpp"
#include "snapstack/metrics.hpp"
#include "snapstack/network.hpp"
#include "snapstack/stacking.hpp"
#include "snapstack/training.hpp"

namespace snapstack {

// Everything one experiment needs, loaded from a JSON config file whose keys
// mirror these fields. Outputs embed digest() plus the seeds, so two runs of
// an identical config produce identical files.
struct NetworkTrainConfig {
    std::string arch;  // covnet30 | covnet30-mini | companion
    std::uint64_t total_iterations = 200;
    std::size_t batch_size = 16;
    std::vector<double> checkpoint_fractions;
    std::uint64_t seed = 0;
    double learning_rate = 0.001;
    double dropout = 0.15;
    // companion-only knobs
    std::size_t base_depth = 4;
    std::size_t width_divisor = 8;
    std::size_t head_channels = 32;
    bool freeze_trunk = false;
};

struct ExperimentConfig {
    std::string manifest_path;
    std::string output_dir;
    std::size_t input_size = 64;

    std::size_t fold_count = 5;
    std::array<double, 3> ratios{0.70, 0.10, 0.20};
    std::uint64_t fold_seed = 0;

    AugmentConfig augment;
    std::vector<double> class_weights{30.0, 1.0, 1.0};
    double stacker_lambda = 1.0;
    std::size_t bootstrap_resamples = 200;
    std::uint64_t eval_seed = 0;

    NetworkTrainConfig covnet30;   // produces sub-models 1 and 2
    NetworkTrainConfig companion;  // produces sub-models 3, 4 and 5

    void validate() const;
    std::uint64_t digest() const;

    static ExperimentConfig from_file(const std::string& path);
    void save(const std::string& path) const;
};

// Global sub-model numbering: 1 and 2 come from the first base network's
// schedule, 3..5 from the second's.
inline constexpr std::size_t kSubModelCount = 5;
std::string network_for_sub(std::size_t sub);           // "covnet30" or "companion"
std::vector<std::size_t> subs_for_network(const std::string& network);

NetworkSpec build_network_spec(const ExperimentConfig& config, const std::string& network);

// ---- file layout under config.output_dir ----
std::string fold_plan_path(const ExperimentConfig& config);
std::string fold_dir(const ExperimentConfig& config, std::size_t fold);  // 1-based fold
std::string checkpoint_path(const ExperimentConfig& config, std::size_t fold, std::size_t sub);
std::string stacked_model_path(const ExperimentConfig& config, std::size_t fold);
std::string stack_features_path(const ExperimentConfig& config, std::size_t fold);
std::string eval_report_path(const ExperimentConfig& config, std::size_t fold,
                             const std::string& target);
std::string mean_report_path(const ExperimentConfig& config, const std::string& target);

// ---- pipeline stages (the CLI subcommands call straight into these) ----

// Builds the patient-level fold plan, writes it as JSON and prints per-fold
// per-class image counts.
FoldPlan cmd_split(const ExperimentConfig& config, std::ostream& out);

FoldPlan read_fold_plan(const std::string& path, const ExperimentConfig& config);

// Trains one base network on one fold (1-based) and writes its scheduled
// checkpoints, a JSONL training log and a small metadata sidecar per file.
// Returns the checkpoint paths.
std::vector<std::string> cmd_train(const ExperimentConfig& config, std::size_t fold,
                                   const std::string& network);

// Collects validation features from the five checkpoints, fits the
// one-vs-rest stacker and writes the model plus an audit table of the
// feature matrix.
StackedModel cmd_stack(const ExperimentConfig& config, std::size_t fold);

struct EvalSummary {
    std::string target;
    std::size_t fold = 0;  // 0 = mean row
    std::size_t n = 0;
    double overall_accuracy = 0.0;
    double error_rate = 0.0;
    double error_ci = 0.0;
    std::optional<double> macro_sensitivity, macro_specificity, macro_ppv, macro_f1,
        macro_accuracy_ovr;
    double macro_auc = 0.0;
    double macro_auc_ci = 0.0;
};

// Runs inference for `target` ("stacked", "sub1".."sub5", or a base-network
// name meaning its final sub-model) on the fold's test partition and writes
// the metrics report plus per-class ROC tables.
EvalSummary cmd_evaluate(const ExperimentConfig& config, std::size_t fold,
                         const std::string& target);

// Evaluates every fold, writes per-fold reports plus the cross-fold mean
// row. Returns per-fold summaries followed by the mean.
std::vector<EvalSummary> cmd_evaluate_all_folds(const ExperimentConfig& config,
                                                const std::string& target);

// Accuracy grid: one row per target plus the stacked model, one column per
// fold. Written to comparison.txt under the output directory.
std::string cmd_compare(const ExperimentConfig& config, const std::vector<std::size_t>& folds,
                        const std::vector<std::string>& targets);

}  // namespace snapstack
