#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "snapstack/data.hpp"
#include "snapstack/training.hpp"
#include "testutil.hpp"

using namespace snapstack;
using testutil::bitwise_equal;

namespace {
const LossConfig kUnitWeights{{1.0, 1.0, 1.0}};
const LossConfig kPaperWeights{{30.0, 1.0, 1.0}};
}  // namespace

TEST_CASE("loss is zero for a perfect prediction") {
    const Tensor target = one_hot({1}, 3);
    const auto r = weighted_cross_entropy(target, target, kUnitWeights);
    // -log(1) clamps to 0 up to the probability floor
    CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-11));
}

TEST_CASE("uniform prediction over three classes costs ln 3") {
    const Tensor uniform = Tensor::full({1, 3}, 1.0 / 3.0);
    const auto r = weighted_cross_entropy(uniform, one_hot({0}, 3), kUnitWeights);
    CHECK(std::abs(r.loss - std::log(3.0)) < 1e-9);

    // Weight 30 on the true class multiplies that sample's loss by exactly 30.
    const auto rw = weighted_cross_entropy(uniform, one_hot({0}, 3), kPaperWeights);
    CHECK(rw.loss == 30.0 * r.loss);
}

TEST_CASE("scaling every class weight scales loss and gradient exactly") {
    Rng rng(3);
    const Tensor logits = Tensor::uniform({6, 3}, -2, 2, rng);
    const Tensor probs = softmax_rows(logits);
    const Tensor targets = one_hot({0, 1, 2, 0, 1, 2}, 3);

    const auto base = weighted_cross_entropy(probs, targets, LossConfig{{2.0, 3.0, 4.0}});
    const auto scaled = weighted_cross_entropy(probs, targets, LossConfig{{5.0, 7.5, 10.0}});
    CHECK(scaled.loss == doctest::Approx(2.5 * base.loss).epsilon(1e-12));
    for (std::size_t i = 0; i < base.grad_logits.size(); ++i)
        CHECK(scaled.grad_logits.data()[i] ==
              doctest::Approx(2.5 * base.grad_logits.data()[i]).epsilon(1e-12));

    const auto unit = weighted_cross_entropy(probs, targets, kUnitWeights);
    double manual = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
        manual += -std::log(probs.at({i, i % 3}));
    CHECK(unit.loss == doctest::Approx(manual / 6.0).epsilon(1e-12));
}

TEST_CASE("fused loss gradient matches finite differences through softmax") {
    Rng rng(4);
    for (int trial = 0; trial < 3; ++trial) {
        Rng trial_rng = rng.fork(trial);
        const Tensor logits = Tensor::uniform({4, 3}, -2, 2, trial_rng);
        const Tensor targets = one_hot({0, 2, 1, 0}, 3);
        const LossConfig weights{{3.0, 1.0, 2.0}};

        const auto analytic =
            weighted_cross_entropy(softmax_rows(logits), targets, weights);
        const double err = testutil::finite_diff_max_rel_err(
            [&](const Tensor& probe) {
                return weighted_cross_entropy(softmax_rows(probe), targets, weights).loss;
            },
            logits, analytic.grad_logits);
        CHECK(err < 1e-5);
    }
}

TEST_CASE("loss input validation") {
    CHECK_THROWS(weighted_cross_entropy(Tensor::full({1, 3}, 1.0 / 3), one_hot({0}, 3),
                                        LossConfig{{1.0, 1.0}}));
    CHECK_THROWS(weighted_cross_entropy(Tensor::full({1, 3}, 1.0 / 3),
                                        Tensor::from({1, 3}, {1, 1, 0}), kUnitWeights));
    CHECK_THROWS(weighted_cross_entropy(Tensor::full({1, 3}, 1.0 / 3),
                                        Tensor::from({1, 3}, {0.5, 0.5, 0}), kUnitWeights));
}

TEST_CASE("adam: zero gradient leaves parameters, increments the step") {
    const NetworkSpec spec = build_covnet30_mini(48, 3);
    Network net = Network::create(spec, 1);
    const NetworkState before = net.state();
    net.zero_grads();
    auto params = net.parameters();
    AdamOptimizer opt;
    opt.step(params);
    CHECK(opt.steps_taken() == 1);
    for (std::size_t l = 0; l < before.layers.size(); ++l)
        for (std::size_t p = 0; p < before.layers[l].params.size(); ++p)
            CHECK(bitwise_equal(net.state().layers[l].params[p].second,
                                before.layers[l].params[p].second));
}

TEST_CASE("adam first step moves by about the learning rate") {
    // With a constant gradient the bias-corrected ratio is 1, so the first
    // update is alpha * g/(|g| + eps) ~= alpha * sign(g).
    const NetworkSpec tiny = [] {
        NetworkSpec s;
        s.name = "probe";
        s.input_shape = {4, 4, 1};
        s.layers = {LayerSpec::global_avg_pool(), LayerSpec::dense(2), LayerSpec::softmax()};
        s.class_count = 2;
        return s;
    }();
    Network net = Network::create(tiny, 2);
    net.zero_grads();
    auto params = net.parameters();
    std::vector<double> initial;
    for (auto& p : params) {
        for (std::size_t i = 0; i < p.grad->size(); ++i) p.grad->data()[i] = 0.5;
        for (double v : p.value->values()) initial.push_back(v);
    }
    AdamOptimizer opt(AdamConfig{.learning_rate = 0.001});
    opt.step(params);
    std::size_t k = 0;
    for (auto& p : params)
        for (double v : p.value->values())
            CHECK(std::abs((initial[k++] - v) - 0.001) < 1e-6);
}

TEST_CASE("adam rejects non-finite gradients with diagnostics") {
    const NetworkSpec tiny = [] {
        NetworkSpec s;
        s.name = "probe";
        s.input_shape = {2, 2, 1};
        s.layers = {LayerSpec::global_avg_pool(), LayerSpec::dense(2), LayerSpec::softmax()};
        s.class_count = 2;
        return s;
    }();
    Network net = Network::create(tiny, 3);
    net.zero_grads();
    auto params = net.parameters();
    params[0].grad->data()[0] = std::nan("");
    AdamOptimizer opt;
    CHECK_THROWS_WITH_AS(opt.step(params), doctest::Contains("non-finite gradient"),
                         std::runtime_error);
}

TEST_CASE("checkpoint schedules reproduce the published iteration marks") {
    TrainPlan covnet;
    covnet.total_iterations = 1530;
    covnet.checkpoint_fractions = {0.5, 1.0};
    CHECK(covnet.checkpoint_iterations() == std::vector<std::uint64_t>{765, 1530});

    TrainPlan companion;
    companion.total_iterations = 2121;
    companion.checkpoint_fractions = {1.0 / 3.0, 2.0 / 3.0, 1.0};
    CHECK(companion.checkpoint_iterations() == std::vector<std::uint64_t>{707, 1414, 2121});

    TrainPlan bad;
    bad.total_iterations = 100;
    bad.checkpoint_fractions = {0.5, 0.4, 1.0};
    CHECK_THROWS(bad.checkpoint_iterations());
    bad.checkpoint_fractions = {0.5, 0.9};
    CHECK_THROWS(bad.checkpoint_iterations());
    bad.checkpoint_fractions = {};
    CHECK_THROWS(bad.checkpoint_iterations());
}

namespace {

// In-memory synthetic samples; keys carry (label, patient, index).
struct SyntheticBatchSource {
    std::vector<TrainSample> samples;
    SampleLoader loader;
};

SyntheticBatchSource make_source(std::size_t per_class, std::size_t size, std::uint64_t seed) {
    SyntheticBatchSource src;
    for (int cls = 0; cls < 3; ++cls)
        for (std::size_t i = 0; i < per_class; ++i)
            src.samples.push_back(
                {"synthetic:" + std::to_string(cls) + ":" + std::to_string(i), cls});
    src.loader = [size, seed, per_class](const TrainSample& s, std::uint64_t, std::size_t idx) {
        const int cls = s.label;
        const std::uint64_t i = idx % per_class;
        return synthetic_image(cls, i / 2, i % 2, size, seed);
    };
    return src;
}

}  // namespace

TEST_CASE("training reduces the loss on separable synthetic data") {
    const auto src = make_source(10, 32, 77);
    NetworkSpec spec;
    spec.name = "toy";
    spec.input_shape = {32, 32, 3};
    spec.layers = {LayerSpec::conv2d(5, 5, 4), LayerSpec::relu(),    LayerSpec::maxpool2d(),
                   LayerSpec::global_avg_pool(), LayerSpec::dense(3), LayerSpec::softmax()};
    spec.class_count = 3;

    TrainPlan plan;
    plan.total_iterations = 10;
    plan.batch_size = 8;
    plan.checkpoint_fractions = {0.5, 1.0};
    plan.seed = 5;

    std::ostringstream log;
    const TrainResult result = train(spec, src.samples, plan, kUnitWeights, src.loader, &log);
    REQUIRE(result.checkpoints.size() == 2);
    CHECK(result.checkpoints[0].trained_iterations == 5);
    CHECK(result.checkpoints[1].trained_iterations == 10);

    // First and last logged losses; training on this corpus must make progress.
    std::istringstream lines(log.str());
    std::string line, first, last;
    while (std::getline(lines, line)) {
        if (first.empty()) first = line;
        last = line;
    }
    const auto loss_of = [](const std::string& record) {
        const auto pos = record.find("\"loss\":");
        return std::stod(record.substr(pos + 7));
    };
    CHECK(loss_of(last) < loss_of(first));
    CHECK(first.find("\"iteration\":1,") != std::string::npos);
    CHECK(first.find("\"wall_ms\":") != std::string::npos);
}

TEST_CASE("training is reproducible from the seed") {
    const auto src = make_source(6, 24, 13);
    NetworkSpec spec;
    spec.name = "toy";
    spec.input_shape = {24, 24, 3};
    spec.layers = {LayerSpec::conv2d(3, 3, 2), LayerSpec::relu(), LayerSpec::batchnorm(),
                   LayerSpec::dropout(0.15),   LayerSpec::global_avg_pool(),
                   LayerSpec::dense(3),        LayerSpec::softmax()};
    spec.class_count = 3;

    TrainPlan plan;
    plan.total_iterations = 6;
    plan.batch_size = 4;
    plan.checkpoint_fractions = {1.0};
    plan.seed = 21;

    const TrainResult a = train(spec, src.samples, plan, kPaperWeights, src.loader);
    const TrainResult b = train(spec, src.samples, plan, kPaperWeights, src.loader);
    REQUIRE(a.checkpoints.size() == 1);
    CHECK(a.final_loss == b.final_loss);
    const auto& la = a.checkpoints[0].layers;
    const auto& lb = b.checkpoints[0].layers;
    for (std::size_t l = 0; l < la.size(); ++l)
        for (std::size_t p = 0; p < la[l].params.size(); ++p)
            CHECK(bitwise_equal(la[l].params[p].second, lb[l].params[p].second));
}

TEST_CASE("training rejects empty data and warns on missing weighted classes") {
    NetworkSpec spec;
    spec.name = "toy";
    spec.input_shape = {8, 8, 1};
    spec.layers = {LayerSpec::global_avg_pool(), LayerSpec::dense(3), LayerSpec::softmax()};
    spec.class_count = 3;
    TrainPlan plan;
    plan.total_iterations = 1;
    plan.checkpoint_fractions = {1.0};
    const SampleLoader loader = [](const TrainSample&, std::uint64_t, std::size_t) {
        return Tensor::zeros({8, 8, 1});
    };
    CHECK_THROWS(train(spec, {}, plan, kUnitWeights, loader));

    // A weighted class with no samples warns but trains.
    plan.batch_size = 2;
    const std::vector<TrainSample> two_classes{{"a", 0}, {"b", 1}, {"c", 0}, {"d", 1}};
    CHECK_NOTHROW(train(spec, two_classes, plan, kPaperWeights, loader));
}
