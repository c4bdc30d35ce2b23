#pragma once

#include <cstddef>
#include <vector>

#include "snapstack/tensor.hpp"

// OpenMP kernels behind every heavy tensor operation. All of them are
// gather-style: each output element is written by exactly one thread and
// accumulated in the same fixed order as the serial reference in
// snapstack::serial, so results are bit-identical to the serial path at any
// thread count.
//
// Layout conventions: activations are [N,H,W,C], convolution kernels are
// [kh,kw,Cin,Cout], dense weights are [D,U]. Convolutions are valid
// cross-correlations with stride 1; pooling is 2x2 stride 2 with floor on
// odd extents.

namespace snapstack::kernels {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel,
                         std::size_t in_h, std::size_t in_w);
Tensor conv2d_grad_kernel(const Tensor& x, const Tensor& grad_out,
                          std::size_t kh, std::size_t kw);
Tensor conv2d_grad_bias(const Tensor& grad_out);

Tensor maxpool2x2_forward(const Tensor& x);
// Routes each window's gradient to the window's first maximum (row-major
// scan order breaks ties); recomputes the argmax from the cached input.
Tensor maxpool2x2_backward(const Tensor& x, const Tensor& grad_out);

Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& grad_out, std::size_t h, std::size_t w);

// Per-channel mean and biased variance over batch and spatial axes.
// Accepts [N,H,W,C] or [N,C].
void channel_moments(const Tensor& x, std::vector<double>& mean, std::vector<double>& var);

}  // namespace snapstack::kernels

// Plain single-threaded reference implementations, kept for correctness
// tests and the kernel benchmark.
namespace snapstack::serial {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel,
                         std::size_t in_h, std::size_t in_w);
Tensor conv2d_grad_kernel(const Tensor& x, const Tensor& grad_out,
                          std::size_t kh, std::size_t kw);
Tensor maxpool2x2_forward(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);

}  // namespace snapstack::serial
