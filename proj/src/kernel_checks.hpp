#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "snapstack/tensor.hpp"

// Shared argument validation for the parallel kernels and their serial
// references.

namespace snapstack::detail {

struct ConvDims {
    std::size_t n, h, w, cin, kh, kw, cout, oh, ow;
};

inline ConvDims conv_dims(const Tensor& x, const Tensor& kernel, const Tensor* bias) {
    if (x.rank() != 4) throw std::invalid_argument("conv2d input must be [N,H,W,C]");
    if (kernel.rank() != 4) throw std::invalid_argument("conv2d kernel must be [kh,kw,Cin,Cout]");
    ConvDims d{};
    d.n = x.extent(0);
    d.h = x.extent(1);
    d.w = x.extent(2);
    d.cin = x.extent(3);
    d.kh = kernel.extent(0);
    d.kw = kernel.extent(1);
    d.cout = kernel.extent(3);
    if (kernel.extent(2) != d.cin)
        throw std::invalid_argument("conv2d channel mismatch: input has " +
                                    std::to_string(d.cin) + ", kernel expects " +
                                    std::to_string(kernel.extent(2)));
    if (d.h < d.kh || d.w < d.kw)
        throw std::invalid_argument("conv2d spatial extent smaller than kernel");
    if (bias && (bias->rank() != 1 || bias->extent(0) != d.cout))
        throw std::invalid_argument("conv2d bias must be [Cout]");
    d.oh = d.h - d.kh + 1;
    d.ow = d.w - d.kw + 1;
    return d;
}

inline void check_matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul needs rank-2 tensors");
    if (a.extent(1) != b.extent(0))
        throw std::invalid_argument("matmul inner extents disagree: " + a.shape_string() +
                                    " x " + b.shape_string());
}

inline void check_pool_input(const Tensor& x) {
    if (x.rank() != 4) throw std::invalid_argument("maxpool input must be [N,H,W,C]");
    if (x.extent(1) < 2 || x.extent(2) < 2)
        throw std::invalid_argument("maxpool needs spatial extents >= 2");
}

}  // namespace snapstack::detail
