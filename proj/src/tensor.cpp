#include "snapstack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "snapstack/kernels.hpp"
#include "snapstack/wire.hpp"

namespace snapstack {

std::size_t shape_product(std::span<const std::size_t> shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

namespace {
void check_shape(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one extent");
    for (auto e : shape)
        if (e == 0) throw std::invalid_argument("tensor extents must be >= 1");
}
}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    check_shape(shape);
    Tensor t;
    t.data_.assign(shape_product(shape), 0.0);
    t.shape_ = std::move(shape);
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    if (!std::isfinite(value)) throw std::invalid_argument("constant fill value must be finite");
    check_shape(shape);
    Tensor t;
    t.data_.assign(shape_product(shape), value);
    t.shape_ = std::move(shape);
    return t;
}

Tensor Tensor::uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng) {
    if (!std::isfinite(lo) || !std::isfinite(hi))
        throw std::invalid_argument("uniform fill bounds must be finite");
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.data_) v = rng.uniform(lo, hi);
    return t;
}

Tensor Tensor::normal(std::vector<std::size_t> shape, double mu, double sigma, Rng& rng) {
    if (!std::isfinite(mu) || !std::isfinite(sigma))
        throw std::invalid_argument("normal fill parameters must be finite");
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.data_) v = rng.normal(mu, sigma);
    return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
    check_shape(shape);
    if (shape_product(shape) != values.size())
        throw std::invalid_argument("value count does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) throw std::out_of_range("tensor axis out of range");
    return shape_[axis];
}

std::size_t Tensor::flat_index(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size())
        throw std::invalid_argument("index rank does not match tensor rank");
    std::size_t flat = 0;
    for (std::size_t d = 0; d < shape_.size(); ++d) {
        if (index[d] >= shape_[d]) {
            std::ostringstream msg;
            msg << "index " << index[d] << " out of bounds for axis " << d << " (extent "
                << shape_[d] << ")";
            throw std::out_of_range(msg.str());
        }
        flat = flat * shape_[d] + index[d];
    }
    return flat;
}

double& Tensor::at(std::span<const std::size_t> index) { return data_[flat_index(index)]; }
double Tensor::at(std::span<const std::size_t> index) const { return data_[flat_index(index)]; }

double& Tensor::at(std::initializer_list<std::size_t> index) {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
}
double Tensor::at(std::initializer_list<std::size_t> index) const {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
}

double Tensor::scalar() const {
    if (data_.size() != 1) throw std::logic_error("scalar() on a tensor with size != 1");
    return data_[0];
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    check_shape(shape);
    if (shape_product(shape) != data_.size())
        throw std::invalid_argument("reshape changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

void Tensor::write(std::ostream& os) const {
    if (shape_.size() > 255) throw std::logic_error("tensor rank exceeds wire format");
    wire::put_u8(os, static_cast<std::uint8_t>(shape_.size()));
    for (auto e : shape_) wire::put_u64(os, e);
    for (double v : data_) wire::put_f64(os, v);
}

Tensor Tensor::read(std::istream& is) {
    const auto rank = wire::get_u8(is, "tensor rank");
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) {
        e = static_cast<std::size_t>(wire::get_u64(is, "tensor extent"));
        if (e == 0) throw std::runtime_error("corrupt tensor: zero extent");
    }
    Tensor t;
    t.data_.resize(shape_product(shape));
    t.shape_ = std::move(shape);
    for (auto& v : t.data_) v = wire::get_f64(is, "tensor data");
    return t;
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ',';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) { return kernels::matmul(a, b); }

Tensor reduce(const Tensor& t, std::vector<std::size_t> axes, ReduceOp op) {
    if (t.empty()) throw std::invalid_argument("reduce on empty tensor");
    std::sort(axes.begin(), axes.end());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= t.rank()) throw std::invalid_argument("reduce axis out of range");
        if (i > 0 && axes[i] == axes[i - 1]) throw std::invalid_argument("duplicate reduce axis");
    }

    const auto& shape = t.shape();
    std::vector<bool> reduced(t.rank(), false);
    for (auto a : axes) reduced[a] = true;

    std::vector<std::size_t> kept_shape, kept_axes, red_axes;
    for (std::size_t d = 0; d < t.rank(); ++d) {
        if (reduced[d]) {
            red_axes.push_back(d);
        } else {
            kept_axes.push_back(d);
            kept_shape.push_back(shape[d]);
        }
    }

    std::vector<std::size_t> strides(t.rank(), 1);
    for (std::size_t d = t.rank(); d-- > 1;) strides[d - 1] = strides[d] * shape[d];

    const std::size_t out_size = shape_product(kept_shape);
    const std::size_t red_size = t.size() / out_size;
    std::vector<double> out(out_size);
    const double* src = t.data();

    // Each output element accumulates its own slice in row-major order, so
    // the result is independent of the thread count.
#pragma omp parallel for schedule(static)
    for (long long oi = 0; oi < static_cast<long long>(out_size); ++oi) {
        std::size_t base = 0;
        {
            std::size_t rem = static_cast<std::size_t>(oi);
            for (std::size_t k = kept_axes.size(); k-- > 0;) {
                base += (rem % kept_shape[k]) * strides[kept_axes[k]];
                rem /= kept_shape[k];
            }
        }
        double acc = 0.0;
        bool first = true;
        for (std::size_t ri = 0; ri < red_size; ++ri) {
            std::size_t off = base;
            std::size_t rem = ri;
            for (std::size_t k = red_axes.size(); k-- > 0;) {
                off += (rem % shape[red_axes[k]]) * strides[red_axes[k]];
                rem /= shape[red_axes[k]];
            }
            const double v = src[off];
            if (op == ReduceOp::Max) {
                acc = first ? v : std::max(acc, v);
                first = false;
            } else {
                acc += v;
            }
        }
        if (op == ReduceOp::Mean) acc /= static_cast<double>(red_size);
        out[static_cast<std::size_t>(oi)] = acc;
    }

    if (kept_shape.empty()) kept_shape.push_back(1);  // full reduction -> [1]
    return Tensor::from(std::move(kept_shape), std::move(out));
}

}  // namespace snapstack
