#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "snapstack/network.hpp"

namespace snapstack {

// Validation-set feature matrix for the meta-learner: one row per image,
// the five sub-models' class-probability triples concatenated in sub-model
// order (so 5 x 3 = 15 columns for three classes).
struct StackFeatures {
    Tensor matrix;            // [M, models * class_count]
    std::vector<int> labels;  // length M
    std::size_t class_count = 0;
};

// Numerically stable logistic function.
double sigmoid(double z);

// Runs every sub-model in inference mode over the images and concatenates
// the probability rows. Requires exactly five sub-models that all accept the
// image shape.
StackFeatures collect_features(std::vector<Network*> sub_models,
                               const std::vector<Tensor>& images,
                               const std::vector<int>& labels);

// One-vs-rest logistic regression over stack features. theta[i] has an
// intercept in slot 0 followed by one weight per feature column.
struct StackedModel {
    std::size_t class_count = 0;
    std::size_t feature_width = 0;
    double lambda = 1.0;
    std::vector<Tensor> theta;  // class_count tensors of [feature_width + 1]

    bool fitted() const { return !theta.empty(); }
    void save(const std::string& path) const;
    static StackedModel load(const std::string& path);
};

struct FitOptions {
    double tolerance = 1e-6;    // gradient-norm stopping criterion
    std::size_t max_iterations = 50000;
};

// Deterministic full-batch gradient descent with Armijo backtracking from a
// zero start. The objective per class is mean binary cross-entropy plus
// (lambda/2)*||w||^2 with the intercept unregularized; the mean formulation
// keeps the optimum invariant under duplicating every row.
StackedModel fit_stacker(const StackFeatures& features, double lambda,
                         const FitOptions& options = {});

// Score of class i for a feature row: sigmoid(theta_i . [1; x]).
double stacked_score(const StackedModel& model, std::span<const double> feature_row,
                     std::size_t cls);

struct Classification {
    int predicted = 0;
    std::vector<double> scores;  // one-vs-rest scores, not a distribution
};

// Builds the 15-feature row for one image via the sub-models, scores every
// class, and returns the argmax (ties broken toward the lowest class index).
Classification classify(const StackedModel& model, std::vector<Network*> sub_models,
                        const Tensor& image);

}  // namespace snapstack
