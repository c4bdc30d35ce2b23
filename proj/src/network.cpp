#include "snapstack/network.hpp"

#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "snapstack/digest.hpp"
#include "snapstack/wire.hpp"

namespace snapstack {

void NetworkSpec::validate() const {
    if (name.empty()) throw std::invalid_argument("network needs a name");
    if (input_shape.size() != 3) throw std::invalid_argument("input shape must be [H,W,C]");
    if (class_count < 2) throw std::invalid_argument("class_count must be >= 2");
    if (layers.empty()) throw std::invalid_argument("network needs layers");
    if (layers.back().kind != LayerKind::Softmax)
        throw std::invalid_argument("terminal layer must be softmax");
    if (frozen_prefix > layers.size())
        throw std::invalid_argument("frozen_prefix exceeds layer count");
    for (const auto& l : layers) l.validate();
    const auto chain = shape_chain(2);
    const auto& out = chain.back();
    if (out.size() != 2 || out[1] != class_count)
        throw std::invalid_argument("network does not end in class_count outputs");
}

std::vector<std::vector<std::size_t>> NetworkSpec::shape_chain(std::size_t batch) const {
    std::vector<std::vector<std::size_t>> chain;
    std::vector<std::size_t> cur{batch, input_shape[0], input_shape[1], input_shape[2]};
    chain.push_back(cur);
    for (const auto& layer : layers) {
        cur = layer_output_shape(layer, cur);
        chain.push_back(cur);
    }
    return chain;
}

std::size_t NetworkSpec::total_parameter_count() const {
    std::size_t total = 0;
    std::vector<std::size_t> cur{1, input_shape[0], input_shape[1], input_shape[2]};
    for (const auto& layer : layers) {
        total += layer_parameter_count(layer, cur);
        cur = layer_output_shape(layer, cur);
    }
    return total;
}

std::uint64_t NetworkSpec::digest() const {
    Fnv1a h;
    h.update(name);
    h.update_u64(input_shape.size());
    for (auto e : input_shape) h.update_u64(e);
    h.update_u64(class_count);
    h.update_u64(frozen_prefix);
    h.update_u64(layers.size());
    for (const auto& l : layers) h.update(l.describe());
    return h.value();
}

std::vector<LayerTableRow> layer_table(const NetworkSpec& spec) {
    std::vector<LayerTableRow> rows;
    std::vector<std::size_t> cur{1, spec.input_shape[0], spec.input_shape[1],
                                 spec.input_shape[2]};
    std::size_t conv_n = 0, pool_n = 0, bn_n = 0, drop_n = 0, fc_n = 0;

    const auto sample_shape = [](const std::vector<std::size_t>& s) {
        return std::vector<std::size_t>(s.begin() + 1, s.end());
    };

    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        const std::size_t params = layer_parameter_count(layer, cur);
        auto out = layer_output_shape(layer, cur);
        const auto next_is = [&](LayerKind k) {
            return i + 1 < spec.layers.size() && spec.layers[i + 1].kind == k;
        };

        LayerTableRow row;
        row.kernel = "-";
        row.parameter_count = params;
        switch (layer.kind) {
            case LayerKind::Conv2d: {
                std::ostringstream os;
                os << layer.kernel_h << 'x' << layer.kernel_w;
                row.kernel = os.str();
                row.name = "conv2D_" + std::to_string(++conv_n);
                row.type = "Convolutional";
                if (next_is(LayerKind::Relu)) {
                    row.type += " + ReLU";
                    out = layer_output_shape(spec.layers[++i], out);
                }
                break;
            }
            case LayerKind::MaxPool2d:
                row.name = "max_pooling_" + std::to_string(++pool_n);
                row.type = "Max Pooling";
                row.kernel = "2x2";
                break;
            case LayerKind::BatchNorm:
                row.name = "batchNo_" + std::to_string(++bn_n);
                row.type = "Batch Normalization";
                break;
            case LayerKind::Dropout:
                row.name = "dropout_" + std::to_string(++drop_n);
                row.type = "Dropout";
                break;
            case LayerKind::GlobalAvgPool:
                row.name = "globAvgPooling";
                row.type = "Global AvgPooling";
                break;
            case LayerKind::Dense:
                row.name = "FC_" + std::to_string(++fc_n);
                row.type = "Fully Connected";
                if (next_is(LayerKind::Relu)) {
                    row.type += " + ReLU";
                    out = layer_output_shape(spec.layers[++i], out);
                } else if (next_is(LayerKind::Softmax)) {
                    row.type += " + Softmax";
                    out = layer_output_shape(spec.layers[++i], out);
                }
                break;
            case LayerKind::Relu:
                row.name = "activation";
                row.type = "ReLU";
                break;
            case LayerKind::Softmax:
                row.name = "softmax";
                row.type = "Softmax";
                break;
        }
        row.output = sample_shape(out);
        rows.push_back(std::move(row));
        cur = std::move(out);
    }
    return rows;
}

NetworkState network_init(const NetworkSpec& spec, Rng& rng) {
    spec.validate();
    NetworkState state;
    state.spec_digest = spec.digest();
    std::vector<std::size_t> cur{2, spec.input_shape[0], spec.input_shape[1],
                                 spec.input_shape[2]};
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        LayerState ls = layer_init(spec.layers[i], cur, rng);
        ls.trainable = i >= spec.frozen_prefix;
        cur = layer_output_shape(spec.layers[i], cur);
        state.layers.push_back(std::move(ls));
    }
    return state;
}

Network::Network(NetworkSpec spec, NetworkState state)
    : spec_(std::move(spec)), state_(std::move(state)) {
    spec_.validate();
    if (state_.spec_digest != spec_.digest())
        throw std::invalid_argument("network state does not belong to this spec");
    if (state_.layers.size() != spec_.layers.size())
        throw std::invalid_argument("network state layer count mismatch");
}

Network Network::create(const NetworkSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    return Network(spec, network_init(spec, rng));
}

Tensor Network::forward(const Tensor& batch, Mode mode, Rng* rng) {
    if (batch.rank() != 4 || batch.extent(1) != spec_.input_shape[0] ||
        batch.extent(2) != spec_.input_shape[1] || batch.extent(3) != spec_.input_shape[2])
        throw std::invalid_argument("batch shape " + batch.shape_string() +
                                    " does not match network input");
    Tensor cur = batch;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i)
        cur = layer_forward(spec_.layers[i], state_.layers[i], cur, mode, rng);
    return cur;
}

Tensor Network::predict_probs(const Tensor& batch) {
    Tensor probs = forward(batch, Mode::Infer, nullptr);
    for (auto& layer : state_.layers) layer.cache.clear();
    return probs;
}

void Network::backward(const Tensor& grad, bool from_logits) {
    std::size_t start = spec_.layers.size();
    if (from_logits) {
        if (spec_.layers.back().kind != LayerKind::Softmax)
            throw std::logic_error("from_logits backward expects a terminal softmax");
        --start;
    }
    Tensor cur = grad;
    for (std::size_t i = start; i-- > 0;)
        cur = layer_backward(spec_.layers[i], state_.layers[i], cur);
}

void Network::zero_grads() {
    for (auto& layer : state_.layers) layer.zero_grads();
}

std::vector<Network::ParamRef> Network::parameters() {
    std::vector<ParamRef> refs;
    for (std::size_t i = 0; i < state_.layers.size(); ++i) {
        auto& layer = state_.layers[i];
        if (layer.grads.size() != layer.params.size()) layer.zero_grads();
        for (std::size_t p = 0; p < layer.params.size(); ++p) {
            const bool stat = layer.params[p].first.rfind("running_", 0) == 0;
            refs.push_back({&layer.params[p].second, &layer.grads[p],
                            layer.trainable && !stat,
                            "layer" + std::to_string(i) + "." + layer.params[p].first});
        }
    }
    return refs;
}

NetworkSpec build_covnet30(double dropout_p) {
    NetworkSpec spec;
    spec.name = "covnet30";
    spec.input_shape = {224, 224, 3};
    spec.class_count = 3;
    auto& L = spec.layers;
    const auto block = [&](std::size_t k, std::size_t ch, bool pool, bool drop) {
        L.push_back(LayerSpec::conv2d(k, k, ch));
        L.push_back(LayerSpec::relu());
        if (pool) L.push_back(LayerSpec::maxpool2d());
        L.push_back(LayerSpec::batchnorm());
        if (drop) L.push_back(LayerSpec::dropout(dropout_p));
    };
    block(7, 32, true, false);
    block(5, 64, true, true);
    block(3, 128, true, true);
    block(3, 128, true, true);
    block(3, 256, false, true);
    block(3, 256, false, true);
    block(3, 512, false, true);
    block(3, 512, false, true);
    L.push_back(LayerSpec::global_avg_pool());
    L.push_back(LayerSpec::dense(1000));
    L.push_back(LayerSpec::relu());
    L.push_back(LayerSpec::dense(3));
    L.push_back(LayerSpec::softmax());
    spec.validate();
    return spec;
}

NetworkSpec build_covnet30_mini(std::size_t input_size, std::size_t class_count,
                                double dropout_p) {
    NetworkSpec spec;
    spec.name = "covnet30-mini";
    spec.input_shape = {input_size, input_size, 3};
    spec.class_count = class_count;
    auto& L = spec.layers;
    const auto block = [&](std::size_t k, std::size_t ch, bool pool, bool drop) {
        L.push_back(LayerSpec::conv2d(k, k, ch));
        L.push_back(LayerSpec::relu());
        if (pool) L.push_back(LayerSpec::maxpool2d());
        L.push_back(LayerSpec::batchnorm());
        if (drop) L.push_back(LayerSpec::dropout(dropout_p));
    };
    block(5, 8, true, false);
    block(3, 16, true, true);
    block(3, 32, true, true);
    block(3, 64, false, true);
    L.push_back(LayerSpec::global_avg_pool());
    L.push_back(LayerSpec::dense(32));
    L.push_back(LayerSpec::relu());
    L.push_back(LayerSpec::dense(class_count));
    L.push_back(LayerSpec::softmax());
    spec.validate();
    return spec;
}

NetworkSpec build_companion(const CompanionConfig& config) {
    if (config.base_depth < 1 || config.base_depth > 16)
        throw std::invalid_argument("companion base_depth must be in [1, 16]");
    if (config.width_divisor < 1)
        throw std::invalid_argument("companion width_divisor must be >= 1");
    if (config.head_channels < 1)
        throw std::invalid_argument("companion head_channels must be >= 1");

    NetworkSpec spec;
    spec.name = "companion";
    spec.input_shape = {config.input_size, config.input_size, 3};
    spec.class_count = config.class_count;
    auto& L = spec.layers;

    // Conv blocks of the published 19-layer plan: counts x widths.
    static constexpr std::array<std::size_t, 5> kBlockConvs{2, 2, 4, 4, 4};
    static constexpr std::array<std::size_t, 5> kBlockWidths{64, 128, 256, 512, 512};

    std::size_t placed = 0;
    for (std::size_t b = 0; b < kBlockConvs.size() && placed < config.base_depth; ++b) {
        const std::size_t width = std::max<std::size_t>(1, kBlockWidths[b] / config.width_divisor);
        std::size_t in_block = 0;
        while (in_block < kBlockConvs[b] && placed < config.base_depth) {
            L.push_back(LayerSpec::conv2d(3, 3, width));
            L.push_back(LayerSpec::relu());
            ++in_block;
            ++placed;
        }
        L.push_back(LayerSpec::maxpool2d());  // after each (possibly partial) block
    }
    const std::size_t trunk_layers = L.size();

    L.push_back(LayerSpec::conv2d(3, 3, config.head_channels));
    L.push_back(LayerSpec::relu());
    L.push_back(LayerSpec::conv2d(3, 3, config.head_channels));
    L.push_back(LayerSpec::relu());
    L.push_back(LayerSpec::global_avg_pool());
    L.push_back(LayerSpec::dense(config.class_count));
    L.push_back(LayerSpec::softmax());

    if (config.freeze_trunk) spec.frozen_prefix = trunk_layers;
    spec.validate();  // throws when the shape chain underflows before the head
    return spec;
}

namespace {
constexpr char kCheckpointMagic[8] = {'S', 'N', 'A', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint64_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const NetworkSpec& spec, const NetworkState& state,
                     const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    wire::put_u64(os, kCheckpointVersion);
    wire::put_u64(os, spec.digest());
    wire::put_u64(os, state.trained_iterations);

    std::uint64_t count = 0;
    for (const auto& layer : state.layers) count += layer.params.size();
    wire::put_u64(os, count);

    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        for (const auto& [pname, tensor] : state.layers[i].params) {
            const std::string name = "layer" + std::to_string(i) + "." + pname;
            wire::put_u64(os, name.size());
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            tensor.write(os);
        }
    }
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

NetworkState load_checkpoint(const std::string& path, const NetworkSpec& spec) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (is.gcount() != 8 || !std::equal(magic, magic + 8, kCheckpointMagic))
        throw std::runtime_error("not a checkpoint file: " + path);
    const auto version = wire::get_u64(is, "checkpoint version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version in " + path);
    const auto digest = wire::get_u64(is, "checkpoint digest");
    if (digest != spec.digest())
        throw std::runtime_error("checkpoint/spec digest mismatch: " + path +
                                 " was written for a different network spec");
    const auto iterations = wire::get_u64(is, "trained_iterations");
    const auto count = wire::get_u64(is, "tensor count");

    Rng scratch(0);
    NetworkState state = network_init(spec, scratch);
    state.trained_iterations = iterations;

    std::uint64_t expected = 0;
    for (const auto& layer : state.layers) expected += layer.params.size();
    if (count != expected)
        throw std::runtime_error("checkpoint tensor count mismatch in " + path);

    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        for (auto& [pname, tensor] : state.layers[i].params) {
            const std::string want = "layer" + std::to_string(i) + "." + pname;
            const auto len = wire::get_u64(is, "tensor name length");
            std::string got(len, '\0');
            is.read(got.data(), static_cast<std::streamsize>(len));
            if (is.gcount() != static_cast<std::streamsize>(len))
                throw std::runtime_error("truncated checkpoint: " + path);
            if (got != want)
                throw std::runtime_error("checkpoint tensor order mismatch: expected " + want +
                                         ", found " + got);
            Tensor loaded = Tensor::read(is);
            if (loaded.shape() != tensor.shape())
                throw std::runtime_error("checkpoint tensor shape mismatch for " + want);
            tensor = std::move(loaded);
        }
    }
    if (is.peek() != std::istream::traits_type::eof())
        throw std::runtime_error("trailing bytes after checkpoint payload: " + path);
    for (auto& layer : state.layers) layer.zero_grads();
    return state;
}

}  // namespace snapstack
