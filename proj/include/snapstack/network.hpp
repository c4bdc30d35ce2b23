#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "snapstack/layers.hpp"

namespace snapstack {

// Declarative sequential network: an ordered layer list plus the input
// shape. Activation and softmax entries are layers of their own; the
// summary table view below folds them into their preceding weighted layer.
struct NetworkSpec {
    std::string name;
    std::vector<std::size_t> input_shape;  // [H,W,C]
    std::vector<LayerSpec> layers;
    std::size_t class_count = 0;
    std::size_t frozen_prefix = 0;  // leading layers excluded from updates

    void validate() const;

    // Shape after each layer for batch size n (first entry is the input).
    std::vector<std::vector<std::size_t>> shape_chain(std::size_t batch = 1) const;

    std::size_t total_parameter_count() const;

    // Stable digest over name, shapes, layer list and freeze setting;
    // stored in checkpoints to detect spec/state mismatches.
    std::uint64_t digest() const;
};

// Summary row folding conv2d+relu, dense+relu and dense+softmax pairs into
// single entries, the way layer tables are conventionally printed.
struct LayerTableRow {
    std::string name;
    std::string type;
    std::string kernel;             // "7x7" or "-"
    std::vector<std::size_t> output;  // per-sample shape (no batch axis)
    std::size_t parameter_count;
};

std::vector<LayerTableRow> layer_table(const NetworkSpec& spec);

// Learned parameters for every layer of a spec, plus training progress.
struct NetworkState {
    std::uint64_t spec_digest = 0;
    std::vector<LayerState> layers;
    std::uint64_t trained_iterations = 0;
};

NetworkState network_init(const NetworkSpec& spec, Rng& rng);

// A spec bound to a state; the unit that forward/backward passes, the
// optimizer and checkpointing operate on.
class Network {
public:
    Network(NetworkSpec spec, NetworkState state);
    static Network create(const NetworkSpec& spec, std::uint64_t seed);

    const NetworkSpec& spec() const { return spec_; }
    NetworkState& state() { return state_; }
    const NetworkState& state() const { return state_; }

    // Forward pass over a batch [N,H,W,C]. Train mode needs an rng for
    // dropout; infer mode runs dropout as identity and batchnorm on running
    // statistics.
    Tensor forward(const Tensor& batch, Mode mode, Rng* rng = nullptr);

    // Inference-mode class probabilities, no caches kept alive afterwards.
    Tensor predict_probs(const Tensor& batch);

    // Backpropagates `grad` through the network. When from_logits is true,
    // `grad` is with respect to the pre-softmax logits (the loss already
    // folded the softmax jacobian in) and the terminal softmax layer is
    // skipped.
    void backward(const Tensor& grad, bool from_logits);

    void zero_grads();

    struct ParamRef {
        Tensor* value;
        Tensor* grad;
        bool trainable;
        std::string name;
    };
    std::vector<ParamRef> parameters();

private:
    NetworkSpec spec_;
    NetworkState state_;
};

// Builds the 30-row convolutional classifier: eight conv+ReLU stages
// (7x7x32, 5x5x64, then 3x3 up to 512 channels), four 2x2 max-pools, eight
// batchnorms, seven dropouts, global average pooling and a 1000-unit ReLU
// dense layer ahead of the 3-way softmax. Input is 224x224x3.
NetworkSpec build_covnet30(double dropout_p = 0.15);

// Same stage pattern shrunk for small inputs and quick experiments.
NetworkSpec build_covnet30_mini(std::size_t input_size = 64, std::size_t class_count = 3,
                                double dropout_p = 0.15);

// VGG-style companion. The trunk follows the published 19-layer plan's conv
// blocks ([64,64], [128,128], [256 x4], [512 x4], [512 x4]) truncated to
// base_depth convolutions, each width divided by width_divisor; the
// classification head is always conv+ReLU twice, global average pooling,
// dense, softmax.
struct CompanionConfig {
    std::size_t input_size = 64;
    std::size_t base_depth = 4;       // trunk conv count; 16 = full plan
    std::size_t width_divisor = 8;    // 1 = published widths
    std::size_t head_channels = 512;  // width of the two head convs
    std::size_t class_count = 3;
    bool freeze_trunk = false;
};

NetworkSpec build_companion(const CompanionConfig& config);

// Checkpoint file: magic, format version, spec digest, trained_iterations,
// then each layer's named tensors (running statistics included) in layer
// order. Integers are little-endian u64.
void save_checkpoint(const NetworkSpec& spec, const NetworkState& state, const std::string& path);
NetworkState load_checkpoint(const std::string& path, const NetworkSpec& spec);

}  // namespace snapstack
