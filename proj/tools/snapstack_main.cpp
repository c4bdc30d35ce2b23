#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "snapstack/pipeline.hpp"
#include "snapstack/threads.hpp"

using namespace snapstack;

int main(int argc, char** argv) {
    apply_thread_cap();

    CLI::App app{"snapstack: snapshot-ensemble training and stacking pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;

    // synth
    auto* synth = app.add_subcommand("synth", "generate the synthetic texture corpus");
    std::string synth_dir = "synth";
    std::size_t per_class = 40, synth_size = 64;
    std::uint64_t synth_seed = 7;
    synth->add_option("--out", synth_dir, "output directory");
    synth->add_option("--per-class", per_class, "images per class (>= 4)");
    synth->add_option("--size", synth_size, "square image size");
    synth->add_option("--seed", synth_seed, "generator seed");

    // split
    auto* split = app.add_subcommand("split", "build the patient-level fold plan");
    split->add_option("--config", config_path, "experiment config (JSON)")->required();
    split->add_option("--out", out_override, "override the config's output_dir");

    // train
    auto* train = app.add_subcommand("train", "train a base network on one fold");
    std::size_t fold = 1;
    std::string network;
    train->add_option("--config", config_path, "experiment config (JSON)")->required();
    train->add_option("--fold", fold, "fold index (1-based)")->required();
    train->add_option("--network", network, "covnet30 | companion")->required();
    train->add_option("--out", out_override, "override the config's output_dir");

    // stack
    auto* stack = app.add_subcommand("stack", "fit the stacked meta-learner for one fold");
    stack->add_option("--config", config_path, "experiment config (JSON)")->required();
    stack->add_option("--fold", fold, "fold index (1-based)")->required();
    stack->add_option("--out", out_override, "override the config's output_dir");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "score a model on a fold's test set");
    std::vector<std::string> targets{"stacked"};
    bool all_folds = false;
    std::string compare;
    evaluate->add_option("--config", config_path, "experiment config (JSON)")->required();
    evaluate->add_option("--fold", fold, "fold index (1-based)");
    evaluate->add_option("--target", targets,
                         "stacked | sub1..sub5 | covnet30 | companion (repeatable)");
    evaluate->add_flag("--all-folds", all_folds, "evaluate every fold and write the mean row");
    evaluate->add_option("--compare", compare,
                         "emit an accuracy grid of the targets against this model");
    evaluate->add_option("--out", out_override, "override the config's output_dir");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            const SyntheticCorpus corpus =
                generate_synthetic_corpus(synth_dir, per_class, synth_size, synth_seed);
            std::cout << "wrote " << corpus.manifest.records.size() << " images and "
                      << corpus.manifest_path << '\n';
            return 0;
        }

        ExperimentConfig config = ExperimentConfig::from_file(config_path);
        if (!out_override.empty()) config.output_dir = out_override;

        if (split->parsed()) {
            cmd_split(config, std::cout);
            std::cout << "fold plan written to " << fold_plan_path(config) << '\n';
        } else if (train->parsed()) {
            const auto paths = cmd_train(config, fold, network);
            for (const auto& p : paths) std::cout << "checkpoint " << p << '\n';
        } else if (stack->parsed()) {
            cmd_stack(config, fold);
            std::cout << "stacked model written to " << stacked_model_path(config, fold) << '\n';
        } else if (evaluate->parsed()) {
            if (!compare.empty()) {
                std::vector<std::size_t> folds;
                if (all_folds)
                    for (std::size_t f = 1; f <= config.fold_count; ++f) folds.push_back(f);
                else
                    folds.push_back(fold);
                std::vector<std::string> rows = targets;
                if (std::find(rows.begin(), rows.end(), compare) == rows.end())
                    rows.push_back(compare);
                std::cout << cmd_compare(config, folds, rows);
            } else if (all_folds) {
                for (const auto& target : targets) {
                    const auto summaries = cmd_evaluate_all_folds(config, target);
                    for (const auto& s : summaries) {
                        if (s.fold == 0)
                            std::cout << target << " mean";
                        else
                            std::cout << target << " fold " << s.fold;
                        std::cout << ": accuracy " << 100.0 * s.overall_accuracy << "%\n";
                    }
                }
            } else {
                for (const auto& target : targets) {
                    const EvalSummary s = cmd_evaluate(config, fold, target);
                    std::cout << target << " fold " << s.fold << ": accuracy "
                              << 100.0 * s.overall_accuracy << "%, error " << 100.0 * s.error_rate
                              << " +- " << 100.0 * s.error_ci << " pp, macro AUC " << s.macro_auc
                              << " +- " << s.macro_auc_ci << '\n';
                }
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
