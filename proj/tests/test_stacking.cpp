#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "snapstack/stacking.hpp"
#include "testutil.hpp"

using namespace snapstack;
using testutil::bitwise_equal;

namespace {

// Tiny nets make fast sub-models for shape tests.
NetworkSpec tiny_spec(std::uint64_t salt = 0) {
    NetworkSpec s;
    s.name = "tiny" + std::to_string(salt);
    s.input_shape = {8, 8, 3};
    s.layers = {LayerSpec::conv2d(3, 3, 2), LayerSpec::relu(), LayerSpec::global_avg_pool(),
                LayerSpec::dense(3), LayerSpec::softmax()};
    s.class_count = 3;
    return s;
}

std::vector<Network> five_tiny_models() {
    std::vector<Network> nets;
    for (std::uint64_t j = 0; j < 5; ++j) nets.push_back(Network::create(tiny_spec(), 100 + j));
    return nets;
}

std::vector<Network*> pointers(std::vector<Network>& nets) {
    std::vector<Network*> p;
    for (auto& n : nets) p.push_back(&n);
    return p;
}

// Direct mean-BCE + (lambda/2)||w||^2 evaluation used by the oracle.
double oracle_objective(const std::vector<double>& xs, const std::vector<int>& ys, double bias,
                        double weight, double lambda) {
    double loss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double s = bias + weight * xs[i];
        const double y = ys[i];
        loss += std::max(s, 0.0) - y * s + std::log1p(std::exp(-std::abs(s)));
    }
    return loss / static_cast<double>(xs.size()) + 0.5 * lambda * weight * weight;
}

}  // namespace

TEST_CASE("sigmoid identities") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(2.0) == doctest::Approx(0.880797).epsilon(1e-6));
    for (double z : {-5.0, -0.3, 0.7, 4.2}) CHECK(sigmoid(-z) == doctest::Approx(1.0 - sigmoid(z)));
    CHECK(sigmoid(700.0) == 1.0);  // correctly rounded, no overflow
    CHECK(sigmoid(-700.0) > 0.0);
    CHECK(sigmoid(-700.0) < 1e-300);
}

TEST_CASE("collect_features shape and ordering") {
    auto nets = five_tiny_models();
    Rng rng(1);
    std::vector<Tensor> images;
    std::vector<int> labels;
    for (int i = 0; i < 7; ++i) {
        images.push_back(Tensor::uniform({8, 8, 3}, 0, 1, rng));
        labels.push_back(i % 3);
    }
    const StackFeatures f = collect_features(pointers(nets), images, labels);
    CHECK(f.matrix.shape() == std::vector<std::size_t>{7, 15});

    // Each 3-wide block is that sub-model's probability triple.
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double p = f.matrix.at({i, j * 3 + c});
                CHECK(p >= 0.0);
                CHECK(p <= 1.0);
                sum += p;
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }

    // Rows follow the image order: permuting images permutes rows identically.
    std::vector<Tensor> reversed(images.rbegin(), images.rend());
    std::vector<int> rev_labels(labels.rbegin(), labels.rend());
    const StackFeatures g = collect_features(pointers(nets), reversed, rev_labels);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t c = 0; c < 15; ++c)
            CHECK(g.matrix.at({i, c}) == f.matrix.at({6 - i, c}));

    // Pure function: identical inputs give identical matrices.
    const StackFeatures h = collect_features(pointers(nets), images, labels);
    CHECK(bitwise_equal(h.matrix, f.matrix));

    auto four = pointers(nets);
    four.pop_back();
    CHECK_THROWS(collect_features(four, images, labels));
    CHECK_THROWS(collect_features(pointers(nets), {}, {}));
}

TEST_CASE("fit_stacker solves the separable 1-D problem like exhaustive grid search") {
    // 100 copies of (-1, negative) and (+1, positive) as class 0 vs class 1,
    // laid out as single-feature rows.
    StackFeatures f;
    f.class_count = 2;
    std::vector<double> xs;
    std::vector<int> ys;
    for (int i = 0; i < 100; ++i) {
        xs.push_back(-1.0);
        ys.push_back(0);
        xs.push_back(1.0);
        ys.push_back(1);
    }
    f.matrix = Tensor::from({xs.size(), 1}, xs);
    f.labels = ys;

    const double lambda = 0.1;
    const StackedModel model = fit_stacker(f, lambda);
    REQUIRE(model.theta.size() == 2);

    std::size_t correct = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double s1 = stacked_score(model, std::span<const double>(&xs[i], 1), 1);
        const double s0 = stacked_score(model, std::span<const double>(&xs[i], 1), 0);
        const int predicted = s1 > s0 ? 1 : 0;
        correct += predicted == ys[i];
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(xs.size()) > 0.99);

    // Exhaustive grid over (bias, weight) in [-10,10]^2 at step 0.01 for the
    // class-1 objective; the fitted theta must sit at the grid optimum.
    double best_obj = 1e300, best_bias = 0, best_w = 0;
    std::vector<int> y1(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) y1[i] = ys[i] == 1 ? 1 : 0;
#pragma omp parallel
    {
        double local_best = 1e300, local_bias = 0, local_w = 0;
#pragma omp for schedule(static)
        for (int bi = -1000; bi <= 1000; ++bi) {
            const double bias = bi * 0.01;
            for (int wi = -1000; wi <= 1000; ++wi) {
                const double wgt = wi * 0.01;
                const double obj = oracle_objective(xs, y1, bias, wgt, lambda);
                if (obj < local_best) {
                    local_best = obj;
                    local_bias = bias;
                    local_w = wgt;
                }
            }
        }
#pragma omp critical
        {
            if (local_best < best_obj ||
                (local_best == best_obj && (local_bias < best_bias ||
                                          (local_bias == best_bias && local_w < best_w)))) {
                best_obj = local_best;
                best_bias = local_bias;
                best_w = local_w;
            }
        }
    }
    CHECK(std::abs(model.theta[1].at({0}) - best_bias) <= 0.01);
    CHECK(std::abs(model.theta[1].at({1}) - best_w) <= 0.01);
}

TEST_CASE("duplicating every training row leaves the optimum unchanged") {
    Rng rng(9);
    StackFeatures f;
    f.class_count = 3;
    const std::size_t m = 30;
    f.matrix = Tensor::uniform({m, 6}, 0, 1, rng);
    for (std::size_t i = 0; i < m; ++i) f.labels.push_back(static_cast<int>(i % 3));

    StackFeatures doubled;
    doubled.class_count = 3;
    std::vector<double> data(f.matrix.values().begin(), f.matrix.values().end());
    data.insert(data.end(), f.matrix.values().begin(), f.matrix.values().end());
    doubled.matrix = Tensor::from({2 * m, 6}, std::move(data));
    doubled.labels = f.labels;
    doubled.labels.insert(doubled.labels.end(), f.labels.begin(), f.labels.end());

    const StackedModel a = fit_stacker(f, 0.5);
    const StackedModel b = fit_stacker(doubled, 0.5);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < 7; ++j)
            CHECK(a.theta[c].at({j}) == doctest::Approx(b.theta[c].at({j})).epsilon(1e-4));
}

TEST_CASE("fit_stacker rejects degenerate inputs and reports non-convergence") {
    StackFeatures missing;
    missing.class_count = 3;
    missing.matrix = Tensor::from({2, 2}, {0, 1, 1, 0});
    missing.labels = {0, 1};  // class 2 absent
    CHECK_THROWS_WITH_AS(fit_stacker(missing, 1.0), doctest::Contains("class 2"),
                         std::invalid_argument);

    StackFeatures separable;
    separable.class_count = 2;
    separable.matrix = Tensor::from({2, 1}, {-1, 1});
    separable.labels = {0, 1};
    FitOptions strict;
    strict.max_iterations = 3;  // unreachable tolerance in three steps
    CHECK_THROWS_WITH_AS(fit_stacker(separable, 0.0, strict),
                         doctest::Contains("did not converge"), std::runtime_error);

    CHECK_THROWS(fit_stacker(separable, -1.0));
}

TEST_CASE("regularized fits converge on separable data") {
    StackFeatures separable;
    separable.class_count = 2;
    std::vector<double> xs;
    std::vector<int> ys;
    for (int i = 0; i < 50; ++i) {
        xs.push_back(-2.0 + 0.001 * i);
        ys.push_back(0);
        xs.push_back(2.0 - 0.001 * i);
        ys.push_back(1);
    }
    separable.matrix = Tensor::from({xs.size(), 1}, xs);
    separable.labels = ys;
    const StackedModel model = fit_stacker(separable, 0.05);
    CHECK(std::isfinite(model.theta[0].at({1})));
    CHECK(model.theta[1].at({1}) > 0.0);
}

TEST_CASE("classify matches a per-class score recomputation and breaks ties low") {
    auto nets = five_tiny_models();
    auto ptrs = pointers(nets);

    // Fit on synthetic features from the actual models so widths line up.
    Rng rng(2);
    std::vector<Tensor> images;
    std::vector<int> labels;
    for (int i = 0; i < 60; ++i) {
        images.push_back(Tensor::uniform({8, 8, 3}, 0, 1, rng));
        labels.push_back(i % 3);
    }
    const StackFeatures f = collect_features(ptrs, images, labels);
    const StackedModel model = fit_stacker(f, 1.0);

    for (int i = 0; i < 60; ++i) {
        const Classification c = classify(model, ptrs, images[i]);
        // Brute force: recompute every class score from the feature row.
        const StackFeatures row =
            collect_features(ptrs, {images[i]}, {0});
        int best = 0;
        double best_score = -1.0;
        for (std::size_t cls = 0; cls < 3; ++cls) {
            const double s = stacked_score(
                model, std::span<const double>(row.matrix.data(), 15), cls);
            CHECK(s == doctest::Approx(c.scores[cls]));
            if (s > best_score) {
                best_score = s;
                best = static_cast<int>(cls);
            }
        }
        CHECK(c.predicted == best);
    }

    // One-vs-rest scores are no distribution, and the argmax decision is
    // invariant under the (monotone) sigmoid: raw margins pick the same
    // class as the squashed scores.
    for (int i = 0; i < 10; ++i) {
        const StackFeatures row = collect_features(ptrs, {images[i]}, {0});
        std::span<const double> x(row.matrix.data(), 15);
        int by_margin = 0;
        double best_margin = -1e300;
        for (std::size_t cls = 0; cls < 3; ++cls) {
            const double* th = model.theta[cls].data();
            double margin = th[0];
            for (std::size_t j = 0; j < 15; ++j) margin += th[j + 1] * x[j];
            if (margin > best_margin) {
                best_margin = margin;
                by_margin = static_cast<int>(cls);
            }
        }
        CHECK(classify(model, ptrs, images[i]).predicted == by_margin);
    }

    // All-zero thetas score 0.5 everywhere; the tie goes to class 0.
    StackedModel zeros = model;
    for (auto& t : zeros.theta) t = Tensor::zeros({16});
    const Classification tie = classify(zeros, ptrs, images[0]);
    CHECK(tie.predicted == 0);
    for (double s : tie.scores) CHECK(s == 0.5);

    StackedModel unfit;
    CHECK_THROWS(classify(unfit, ptrs, images[0]));
}

TEST_CASE("stacked training accuracy is at least the best block's") {
    // The meta-learner can copy any single sub-model block, so it must not
    // lose more than a point to the best one on its own training features.
    Rng rng(31);
    StackFeatures f;
    f.class_count = 3;
    const std::size_t m = 90;
    std::vector<double> rows;
    for (std::size_t i = 0; i < m; ++i) {
        const int label = static_cast<int>(i % 3);
        f.labels.push_back(label);
        for (int block = 0; block < 5; ++block) {
            // Block quality varies; block 2 is the sharpest predictor.
            const double conf = 0.4 + 0.12 * block;
            const int vote =
                rng.uniform01() < conf ? label : static_cast<int>(rng.below(3));
            double triple[3] = {0.1, 0.1, 0.1};
            triple[vote] = 0.8;
            rows.insert(rows.end(), triple, triple + 3);
        }
    }
    f.matrix = Tensor::from({m, 15}, std::move(rows));

    const StackedModel model = fit_stacker(f, 1.0);
    std::size_t stacked_correct = 0;
    std::array<std::size_t, 5> block_correct{};
    for (std::size_t i = 0; i < m; ++i) {
        std::span<const double> row(f.matrix.data() + i * 15, 15);
        int best = 0;
        for (std::size_t cls = 1; cls < 3; ++cls)
            if (stacked_score(model, row, cls) > stacked_score(model, row, best))
                best = static_cast<int>(cls);
        stacked_correct += best == f.labels[i];
        for (int block = 0; block < 5; ++block) {
            int vote = 0;
            for (int c = 1; c < 3; ++c)
                if (row[block * 3 + c] > row[block * 3 + vote]) vote = c;
            block_correct[block] += vote == f.labels[i];
        }
    }
    const double stacked_acc = static_cast<double>(stacked_correct) / static_cast<double>(m);
    double best_block = 0.0;
    for (auto c : block_correct)
        best_block = std::max(best_block, static_cast<double>(c) / static_cast<double>(m));
    CHECK(stacked_acc >= best_block - 0.01);
}

TEST_CASE("stacked model serialization round trip") {
    StackFeatures f;
    f.class_count = 3;
    Rng rng(8);
    f.matrix = Tensor::uniform({12, 15}, 0, 1, rng);
    for (int i = 0; i < 12; ++i) f.labels.push_back(i % 3);
    const StackedModel model = fit_stacker(f, 2.0);

    const auto path =
        (std::filesystem::temp_directory_path() / "stacked_roundtrip.bin").string();
    model.save(path);
    const StackedModel back = StackedModel::load(path);
    CHECK(back.class_count == model.class_count);
    CHECK(back.feature_width == 15);
    CHECK(back.lambda == 2.0);
    for (std::size_t c = 0; c < 3; ++c) CHECK(bitwise_equal(back.theta[c], model.theta[c]));
    std::remove(path.c_str());

    StackedModel unfit;
    CHECK_THROWS(unfit.save(path));
}
