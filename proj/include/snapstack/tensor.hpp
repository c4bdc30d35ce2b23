#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "snapstack/rng.hpp"

namespace snapstack {

// Dense row-major tensor of doubles. The value and gradient carrier for the
// whole project. A default-constructed Tensor is the empty sentinel (no
// shape, no data); every factory-produced tensor satisfies
// product(shape) == data.size(). Reductions over all axes yield a [1]
// tensor; read it with scalar().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng);
    static Tensor normal(std::vector<std::size_t> shape, double mu, double sigma, Rng& rng);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> values);

    std::size_t rank() const { return shape_.size(); }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t extent(std::size_t axis) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty() && shape_.empty(); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    // Bounds-checked multi-index access; throws on rank mismatch or an
    // out-of-range coordinate.
    double& at(std::span<const std::size_t> index);
    double at(std::span<const std::size_t> index) const;
    double& at(std::initializer_list<std::size_t> index);
    double at(std::initializer_list<std::size_t> index) const;

    double scalar() const;  // requires size() == 1

    // Same buffer, new shape; element counts must agree.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    // Wire format: rank byte, extents as little-endian u64, then the buffer
    // as little-endian IEEE-754 doubles.
    void write(std::ostream& os) const;
    static Tensor read(std::istream& is);

    std::string shape_string() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;

    std::size_t flat_index(std::span<const std::size_t> index) const;
};

std::size_t shape_product(std::span<const std::size_t> shape);

// [m,k] x [k,n] -> [m,n]; parallel kernel underneath.
Tensor matmul(const Tensor& a, const Tensor& b);

enum class ReduceOp { Sum, Max, Mean };

// Removes the named axes. Reducing over every axis yields a [1] tensor.
// Duplicate or out-of-range axes throw.
Tensor reduce(const Tensor& t, std::vector<std::size_t> axes, ReduceOp op);

}  // namespace snapstack
