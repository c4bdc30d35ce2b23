#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "snapstack/network.hpp"

namespace snapstack {

// Per-class multipliers applied to each sample's loss term; counters class
// imbalance (the experiments here weight the rare class 30:1:1).
struct LossConfig {
    std::vector<double> class_weights;

    void validate(std::size_t class_count) const;
};

struct LossResult {
    double loss;
    Tensor grad_logits;  // [N,C], gradient with respect to pre-softmax logits
};

// Mean over the batch of w_y * (-log p_y), with probabilities floored at
// 1e-12 before the log. The returned gradient folds the softmax jacobian in:
// w_y * (p - t) / N per row.
LossResult weighted_cross_entropy(const Tensor& probs, const Tensor& target_onehot,
                                  const LossConfig& weights);

Tensor one_hot(const std::vector<int>& labels, std::size_t class_count);

struct AdamConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Bias-corrected first/second-moment update. Moments are allocated lazily to
// match the parameter list; step() increments t exactly once per call.
class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamConfig config = {});

    void step(std::vector<Network::ParamRef>& params);

    std::uint64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return config_; }

private:
    AdamConfig config_;
    std::vector<Tensor> m_, v_;
    std::uint64_t t_ = 0;
};

// Iteration budget plus the checkpoint schedule expressed as fractions of it
// (strictly increasing, last exactly 1), so the same plan scales from desk
// runs to full-size budgets.
struct TrainPlan {
    std::uint64_t total_iterations = 0;
    std::size_t batch_size = 16;
    std::vector<double> checkpoint_fractions;
    std::uint64_t seed = 0;
    AdamConfig adam;

    void validate() const;
    // floor(fraction * total); tolerates binary rounding of fractions like
    // 1/3 so that 2121 * (1/3) lands on 707.
    std::vector<std::uint64_t> checkpoint_iterations() const;
};

struct TrainSample {
    std::string key;  // image path or synthetic identifier
    int label = 0;
};

// Supplies the [H,W,C] tensor for one sample. `pass` is the reshuffle epoch
// and `index` the sample's dataset position, so implementations can derive a
// per-image augmentation stream that does not depend on worker scheduling.
using SampleLoader =
    std::function<Tensor(const TrainSample& sample, std::uint64_t pass, std::size_t index)>;

struct TrainResult {
    std::vector<NetworkState> checkpoints;  // one per schedule entry, in order
    double final_loss = 0.0;
};

// Mini-batch training loop: seeded shuffling with a reshuffle at the end of
// every pass, weighted cross-entropy, Adam, and a state snapshot at each
// scheduled iteration (the last always at total_iterations). `log`, when
// given, receives one JSON record per iteration (iteration, loss, wall_ms).
TrainResult train(const NetworkSpec& spec, const std::vector<TrainSample>& data,
                  const TrainPlan& plan, const LossConfig& loss, const SampleLoader& loader,
                  std::ostream* log = nullptr);

}  // namespace snapstack
