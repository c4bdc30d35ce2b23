#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "snapstack/rng.hpp"
#include "snapstack/tensor.hpp"

namespace snapstack {

enum class LayerKind {
    Conv2d,
    Relu,
    MaxPool2d,
    BatchNorm,
    Dropout,
    GlobalAvgPool,
    Dense,
    Softmax,
};

const char* layer_kind_name(LayerKind kind);

enum class Mode { Train, Infer };

// One layer of a sequential network. Convolutions are valid (no padding),
// stride 1; pooling is a fixed 2x2 window with stride 2 and floor on odd
// extents; dropout is inverted (inference is an identity pass).
struct LayerSpec {
    LayerKind kind;
    std::size_t kernel_h = 0;   // conv2d
    std::size_t kernel_w = 0;   // conv2d
    std::size_t out_channels = 0;  // conv2d
    double dropout_p = 0.0;     // dropout
    std::size_t units = 0;      // dense

    static LayerSpec conv2d(std::size_t kh, std::size_t kw, std::size_t out_channels);
    static LayerSpec relu();
    static LayerSpec maxpool2d();
    static LayerSpec batchnorm();
    static LayerSpec dropout(double p);
    static LayerSpec global_avg_pool();
    static LayerSpec dense(std::size_t units);
    static LayerSpec softmax();

    void validate() const;

    // Canonical one-line form, used for digests.
    std::string describe() const;
};

// Learned parameters plus the forward cache one backward pass needs.
// Parameter order within a layer is fixed per kind (it defines the
// checkpoint layout): conv2d -> kernel, bias; batchnorm -> gamma, beta,
// running_mean, running_var; dense -> weight, bias.
struct LayerState {
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<Tensor> grads;  // parallel to params
    std::map<std::string, Tensor> cache;
    bool trainable = true;

    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    void zero_grads();
};

// Output shape of a layer applied to `in`; throws when the combination is
// invalid (kernel larger than input, pooling on <2 extents, dense mismatch).
std::vector<std::size_t> layer_output_shape(const LayerSpec& spec,
                                            const std::vector<std::size_t>& in);

// Element count of all state tensors, running statistics included.
std::size_t layer_parameter_count(const LayerSpec& spec, const std::vector<std::size_t>& in);

// Allocates parameters: He-normal weights (std = sqrt(2/fan_in)), zero
// biases, unit gamma, zero beta, running stats at (0, 1).
LayerState layer_init(const LayerSpec& spec, const std::vector<std::size_t>& in, Rng& rng);

// Runs the layer, caching whatever backward will need. Dropout in train mode
// draws its mask from `rng` (one uniform per element, row-major).
Tensor layer_forward(const LayerSpec& spec, LayerState& state, const Tensor& x, Mode mode,
                     Rng* rng = nullptr);

// Gradients of the forward map. Fills state.grads (aligned with
// state.params) and returns the input gradient. Requires the cache of a
// preceding train-mode forward.
Tensor layer_backward(const LayerSpec& spec, LayerState& state, const Tensor& grad_out);

// Standalone elementwise/row-wise helpers (the same math layer_forward
// dispatches to).
Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& grad_out, const Tensor& x);
Tensor softmax_rows(const Tensor& logits);

}  // namespace snapstack
