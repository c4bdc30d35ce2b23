#include "snapstack/layers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "snapstack/kernels.hpp"

namespace snapstack {

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool2d: return "maxpool2d";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::GlobalAvgPool: return "globalavgpool";
        case LayerKind::Dense: return "dense";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

LayerSpec LayerSpec::conv2d(std::size_t kh, std::size_t kw, std::size_t out_channels) {
    LayerSpec s{LayerKind::Conv2d};
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.out_channels = out_channels;
    s.validate();
    return s;
}
LayerSpec LayerSpec::relu() { return LayerSpec{LayerKind::Relu}; }
LayerSpec LayerSpec::maxpool2d() { return LayerSpec{LayerKind::MaxPool2d}; }
LayerSpec LayerSpec::batchnorm() { return LayerSpec{LayerKind::BatchNorm}; }
LayerSpec LayerSpec::dropout(double p) {
    LayerSpec s{LayerKind::Dropout};
    s.dropout_p = p;
    s.validate();
    return s;
}
LayerSpec LayerSpec::global_avg_pool() { return LayerSpec{LayerKind::GlobalAvgPool}; }
LayerSpec LayerSpec::dense(std::size_t units) {
    LayerSpec s{LayerKind::Dense};
    s.units = units;
    s.validate();
    return s;
}
LayerSpec LayerSpec::softmax() { return LayerSpec{LayerKind::Softmax}; }

void LayerSpec::validate() const {
    switch (kind) {
        case LayerKind::Conv2d:
            if (kernel_h < 1 || kernel_w < 1 || out_channels < 1)
                throw std::invalid_argument("conv2d needs kernel extents and channels >= 1");
            break;
        case LayerKind::Dropout:
            if (!(dropout_p >= 0.0 && dropout_p < 1.0))
                throw std::invalid_argument("dropout probability must be in [0, 1)");
            break;
        case LayerKind::Dense:
            if (units < 1) throw std::invalid_argument("dense needs units >= 1");
            break;
        default:
            break;
    }
}

std::string LayerSpec::describe() const {
    std::ostringstream os;
    os << layer_kind_name(kind);
    switch (kind) {
        case LayerKind::Conv2d:
            os << '(' << kernel_h << 'x' << kernel_w << "->" << out_channels << ')';
            break;
        case LayerKind::Dropout:
            os << '(' << dropout_p << ')';
            break;
        case LayerKind::Dense:
            os << '(' << units << ')';
            break;
        default:
            break;
    }
    return os.str();
}

Tensor& LayerState::param(const std::string& name) {
    for (auto& [n, t] : params)
        if (n == name) return t;
    throw std::logic_error("no parameter named " + name);
}
const Tensor& LayerState::param(const std::string& name) const {
    for (const auto& [n, t] : params)
        if (n == name) return t;
    throw std::logic_error("no parameter named " + name);
}

void LayerState::zero_grads() {
    grads.clear();
    for (const auto& [n, t] : params) grads.push_back(Tensor::zeros(t.shape()));
}

namespace {

std::size_t channels_of(const std::vector<std::size_t>& in) {
    if (in.size() != 4 && in.size() != 2)
        throw std::invalid_argument("expected a [N,H,W,C] or [N,D] input shape");
    return in.back();
}

[[noreturn]] void bad_shape(const LayerSpec& spec, const std::vector<std::size_t>& in) {
    std::ostringstream os;
    os << spec.describe() << " cannot accept input shape [";
    for (std::size_t i = 0; i < in.size(); ++i) os << (i ? "," : "") << in[i];
    os << ']';
    throw std::invalid_argument(os.str());
}

}  // namespace

std::vector<std::size_t> layer_output_shape(const LayerSpec& spec,
                                            const std::vector<std::size_t>& in) {
    switch (spec.kind) {
        case LayerKind::Conv2d: {
            if (in.size() != 4) bad_shape(spec, in);
            if (in[1] < spec.kernel_h || in[2] < spec.kernel_w) bad_shape(spec, in);
            return {in[0], in[1] - spec.kernel_h + 1, in[2] - spec.kernel_w + 1,
                    spec.out_channels};
        }
        case LayerKind::MaxPool2d: {
            if (in.size() != 4 || in[1] < 2 || in[2] < 2) bad_shape(spec, in);
            return {in[0], in[1] / 2, in[2] / 2, in[3]};
        }
        case LayerKind::GlobalAvgPool: {
            if (in.size() != 4) bad_shape(spec, in);
            return {in[0], in[3]};
        }
        case LayerKind::Dense: {
            if (in.size() != 2) bad_shape(spec, in);
            return {in[0], spec.units};
        }
        case LayerKind::Softmax: {
            if (in.size() != 2) bad_shape(spec, in);
            return in;
        }
        case LayerKind::Relu:
        case LayerKind::BatchNorm:
        case LayerKind::Dropout:
            channels_of(in);
            return in;
    }
    bad_shape(spec, in);
}

std::size_t layer_parameter_count(const LayerSpec& spec, const std::vector<std::size_t>& in) {
    switch (spec.kind) {
        case LayerKind::Conv2d:
            return (spec.kernel_h * spec.kernel_w * in[3] + 1) * spec.out_channels;
        case LayerKind::BatchNorm:
            return 4 * channels_of(in);
        case LayerKind::Dense:
            return (in[1] + 1) * spec.units;
        default:
            return 0;
    }
}

LayerState layer_init(const LayerSpec& spec, const std::vector<std::size_t>& in, Rng& rng) {
    layer_output_shape(spec, in);  // shape validation
    LayerState state;
    switch (spec.kind) {
        case LayerKind::Conv2d: {
            const std::size_t fan_in = spec.kernel_h * spec.kernel_w * in[3];
            const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
            state.params.emplace_back(
                "kernel", Tensor::normal({spec.kernel_h, spec.kernel_w, in[3], spec.out_channels},
                                         0.0, std, rng));
            state.params.emplace_back("bias", Tensor::zeros({spec.out_channels}));
            break;
        }
        case LayerKind::BatchNorm: {
            const std::size_t c = channels_of(in);
            state.params.emplace_back("gamma", Tensor::full({c}, 1.0));
            state.params.emplace_back("beta", Tensor::zeros({c}));
            state.params.emplace_back("running_mean", Tensor::zeros({c}));
            state.params.emplace_back("running_var", Tensor::full({c}, 1.0));
            break;
        }
        case LayerKind::Dense: {
            const std::size_t fan_in = in[1];
            const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
            state.params.emplace_back("weight",
                                      Tensor::normal({in[1], spec.units}, 0.0, std, rng));
            state.params.emplace_back("bias", Tensor::zeros({spec.units}));
            break;
        }
        default:
            break;
    }
    state.zero_grads();
    return state;
}

Tensor relu(const Tensor& x) {
    Tensor y = Tensor::zeros(x.shape());
    const double* px = x.data();
    double* py = y.data();
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(x.size()); ++i)
        py[i] = px[i] > 0.0 ? px[i] : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& x) {
    if (!grad_out.same_shape(x)) throw std::invalid_argument("relu_backward shape mismatch");
    Tensor g = Tensor::zeros(x.shape());
    const double* px = x.data();
    const double* pg = grad_out.data();
    double* po = g.data();
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(x.size()); ++i)
        po[i] = px[i] > 0.0 ? pg[i] : 0.0;
    return g;
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax input must be [N,C]");
    for (double v : logits.values())
        if (!std::isfinite(v)) throw std::invalid_argument("softmax input must be finite");
    const std::size_t n = logits.extent(0), c = logits.extent(1);
    Tensor y = Tensor::zeros({n, c});
    const double* px = logits.data();
    double* py = y.data();
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(n); ++r) {
        const double* row = px + r * c;
        double* out = py + r * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
        }
        for (std::size_t j = 0; j < c; ++j) out[j] /= sum;
    }
    return y;
}

namespace {

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.9;

Tensor batchnorm_forward(LayerState& state, const Tensor& x, Mode mode) {
    if (x.rank() != 4 && x.rank() != 2)
        throw std::invalid_argument("batchnorm input must be [N,H,W,C] or [N,C]");
    const std::size_t c = x.shape().back();
    const std::size_t rows = x.size() / c;
    const Tensor& gamma = state.param("gamma");
    const Tensor& beta = state.param("beta");
    if (gamma.size() != c) throw std::invalid_argument("batchnorm channel mismatch");

    Tensor y = Tensor::zeros(x.shape());
    const double* px = x.data();
    double* py = y.data();

    if (mode == Mode::Train) {
        if (x.extent(0) < 2)
            throw std::invalid_argument("batchnorm in train mode needs batch size >= 2");
        std::vector<double> mean, var;
        kernels::channel_moments(x, mean, var);

        Tensor xhat = Tensor::zeros(x.shape());
        Tensor inv_std = Tensor::zeros({c});
        double* pxhat = xhat.data();
        double* pinv = inv_std.data();
        const double* pg = gamma.data();
        const double* pb = beta.data();
#pragma omp parallel for schedule(static)
        for (long long ch = 0; ch < static_cast<long long>(c); ++ch) {
            const double is = 1.0 / std::sqrt(var[ch] + kBatchNormEps);
            pinv[ch] = is;
            for (std::size_t r = 0; r < rows; ++r) {
                const double xh = (px[r * c + ch] - mean[ch]) * is;
                pxhat[r * c + ch] = xh;
                py[r * c + ch] = pg[ch] * xh + pb[ch];
            }
        }

        Tensor& rm = state.param("running_mean");
        Tensor& rv = state.param("running_var");
        for (std::size_t ch = 0; ch < c; ++ch) {
            rm.data()[ch] = kBatchNormMomentum * rm.data()[ch] + (1 - kBatchNormMomentum) * mean[ch];
            rv.data()[ch] = kBatchNormMomentum * rv.data()[ch] + (1 - kBatchNormMomentum) * var[ch];
        }

        state.cache["xhat"] = std::move(xhat);
        state.cache["inv_std"] = std::move(inv_std);
    } else {
        const Tensor& rm = state.param("running_mean");
        const Tensor& rv = state.param("running_var");
        const double* pg = gamma.data();
        const double* pb = beta.data();
#pragma omp parallel for schedule(static)
        for (long long ch = 0; ch < static_cast<long long>(c); ++ch) {
            const double is = 1.0 / std::sqrt(rv.data()[ch] + kBatchNormEps);
            const double m = rm.data()[ch];
            for (std::size_t r = 0; r < rows; ++r)
                py[r * c + ch] = pg[ch] * (px[r * c + ch] - m) * is + pb[ch];
        }
    }
    return y;
}

Tensor batchnorm_backward(LayerState& state, const Tensor& grad_out) {
    const auto it_xhat = state.cache.find("xhat");
    const auto it_inv = state.cache.find("inv_std");
    if (it_xhat == state.cache.end() || it_inv == state.cache.end())
        throw std::logic_error("batchnorm backward without a train-mode forward cache");
    const Tensor& xhat = it_xhat->second;
    const Tensor& inv_std = it_inv->second;
    if (!grad_out.same_shape(xhat))
        throw std::invalid_argument("batchnorm backward gradient shape mismatch");

    const std::size_t c = xhat.shape().back();
    const std::size_t rows = xhat.size() / c;
    const Tensor& gamma = state.param("gamma");

    Tensor gx = Tensor::zeros(xhat.shape());
    Tensor& ggamma = state.grads[0];
    Tensor& gbeta = state.grads[1];

    const double* pg = grad_out.data();
    const double* ph = xhat.data();
    const double* pgam = gamma.data();
    double* pgx = gx.data();
    const double invn = 1.0 / static_cast<double>(rows);

#pragma omp parallel for schedule(static)
    for (long long ch = 0; ch < static_cast<long long>(c); ++ch) {
        double sum_g = 0.0, sum_gh = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            sum_g += pg[r * c + ch];
            sum_gh += pg[r * c + ch] * ph[r * c + ch];
        }
        ggamma.data()[ch] = sum_gh;
        gbeta.data()[ch] = sum_g;
        const double scale = pgam[ch] * inv_std.data()[ch];
        const double mean_g = sum_g * invn;
        const double mean_gh = sum_gh * invn;
        for (std::size_t r = 0; r < rows; ++r)
            pgx[r * c + ch] = scale * (pg[r * c + ch] - mean_g - ph[r * c + ch] * mean_gh);
    }
    return gx;
}

Tensor dropout_forward(const LayerSpec& spec, LayerState& state, const Tensor& x, Mode mode,
                       Rng* rng) {
    spec.validate();
    if (mode == Mode::Infer || spec.dropout_p == 0.0) {
        state.cache.erase("mask");
        return x;
    }
    if (!rng) throw std::invalid_argument("dropout in train mode needs an rng");
    const double keep = 1.0 - spec.dropout_p;
    const double scale = 1.0 / keep;
    Tensor mask = Tensor::zeros(x.shape());
    double* pm = mask.data();
    // Mask generation consumes the stream sequentially so the draw order is
    // schedule-independent.
    for (std::size_t i = 0; i < mask.size(); ++i)
        pm[i] = rng->uniform01() < spec.dropout_p ? 0.0 : scale;

    Tensor y = Tensor::zeros(x.shape());
    const double* px = x.data();
    double* py = y.data();
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(x.size()); ++i) py[i] = px[i] * pm[i];
    state.cache["mask"] = std::move(mask);
    return y;
}

Tensor dense_forward(LayerState& state, const Tensor& x) {
    const Tensor& w = state.param("weight");
    const Tensor& b = state.param("bias");
    if (x.rank() != 2 || x.extent(1) != w.extent(0))
        throw std::invalid_argument("dense input shape mismatch");
    Tensor y = kernels::matmul(x, w);
    const std::size_t n = y.extent(0), u = y.extent(1);
    double* py = y.data();
    const double* pb = b.data();
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(n); ++r)
        for (std::size_t j = 0; j < u; ++j) py[r * u + j] += pb[j];
    return y;
}

Tensor softmax_backward_from_cache(const Tensor& y, const Tensor& grad_out) {
    const std::size_t n = y.extent(0), c = y.extent(1);
    Tensor gx = Tensor::zeros({n, c});
    const double* py = y.data();
    const double* pg = grad_out.data();
    double* po = gx.data();
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(n); ++r) {
        const double* yr = py + r * c;
        const double* gr = pg + r * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < c; ++j) po[r * c + j] = yr[j] * (gr[j] - dot);
    }
    return gx;
}

}  // namespace

Tensor layer_forward(const LayerSpec& spec, LayerState& state, const Tensor& x, Mode mode,
                     Rng* rng) {
    switch (spec.kind) {
        case LayerKind::Conv2d: {
            state.cache["x"] = x;
            return kernels::conv2d_forward(x, state.param("kernel"), state.param("bias"));
        }
        case LayerKind::Relu: {
            state.cache["x"] = x;
            return relu(x);
        }
        case LayerKind::MaxPool2d: {
            state.cache["x"] = x;
            return kernels::maxpool2x2_forward(x);
        }
        case LayerKind::BatchNorm:
            return batchnorm_forward(state, x, mode);
        case LayerKind::Dropout:
            return dropout_forward(spec, state, x, mode, rng);
        case LayerKind::GlobalAvgPool: {
            state.cache["x"] = x;
            return kernels::global_avg_pool(x);
        }
        case LayerKind::Dense: {
            state.cache["x"] = x;
            return dense_forward(state, x);
        }
        case LayerKind::Softmax: {
            Tensor y = softmax_rows(x);
            state.cache["y"] = y;
            return y;
        }
    }
    throw std::logic_error("unknown layer kind");
}

Tensor layer_backward(const LayerSpec& spec, LayerState& state, const Tensor& grad_out) {
    const auto cached = [&state](const char* key) -> const Tensor& {
        const auto it = state.cache.find(key);
        if (it == state.cache.end())
            throw std::logic_error(std::string("layer backward without cached '") + key +
                                   "' (run forward first)");
        return it->second;
    };
    switch (spec.kind) {
        case LayerKind::Conv2d: {
            const Tensor& x = cached("x");
            if (grad_out.shape() != layer_output_shape(spec, x.shape()))
                throw std::invalid_argument("conv2d backward gradient shape mismatch");
            const Tensor& kernel = state.param("kernel");
            state.grads[0] = kernels::conv2d_grad_kernel(x, grad_out, spec.kernel_h, spec.kernel_w);
            state.grads[1] = kernels::conv2d_grad_bias(grad_out);
            return kernels::conv2d_grad_input(grad_out, kernel, x.extent(1), x.extent(2));
        }
        case LayerKind::Relu:
            return relu_backward(grad_out, cached("x"));
        case LayerKind::MaxPool2d:
            return kernels::maxpool2x2_backward(cached("x"), grad_out);
        case LayerKind::BatchNorm:
            return batchnorm_backward(state, grad_out);
        case LayerKind::Dropout: {
            const auto it = state.cache.find("mask");
            if (it == state.cache.end()) return grad_out;  // p == 0 or infer pass
            const Tensor& mask = it->second;
            if (!grad_out.same_shape(mask))
                throw std::invalid_argument("dropout backward gradient shape mismatch");
            Tensor gx = Tensor::zeros(mask.shape());
            const double* pm = mask.data();
            const double* pg = grad_out.data();
            double* po = gx.data();
#pragma omp parallel for schedule(static)
            for (long long i = 0; i < static_cast<long long>(mask.size()); ++i)
                po[i] = pg[i] * pm[i];
            return gx;
        }
        case LayerKind::GlobalAvgPool: {
            const Tensor& x = cached("x");
            return kernels::global_avg_pool_backward(grad_out, x.extent(1), x.extent(2));
        }
        case LayerKind::Dense: {
            const Tensor& x = cached("x");
            const Tensor& w = state.param("weight");
            state.grads[0] = kernels::matmul(kernels::transpose2d(x), grad_out);
            // bias gradient: column sums
            const std::size_t n = grad_out.extent(0), u = grad_out.extent(1);
            Tensor gb = Tensor::zeros({u});
            const double* pg = grad_out.data();
            double* pb = gb.data();
#pragma omp parallel for schedule(static)
            for (long long j = 0; j < static_cast<long long>(u); ++j) {
                double acc = 0.0;
                for (std::size_t r = 0; r < n; ++r) acc += pg[r * u + j];
                pb[j] = acc;
            }
            state.grads[1] = std::move(gb);
            return kernels::matmul(grad_out, kernels::transpose2d(w));
        }
        case LayerKind::Softmax:
            return softmax_backward_from_cache(cached("y"), grad_out);
    }
    throw std::logic_error("unknown layer kind");
}

}  // namespace snapstack
