#include <stdexcept>

#include "kernel_checks.hpp"
#include "snapstack/kernels.hpp"

// Naive single-threaded loops with the same per-element accumulation order
// as the parallel kernels; tests assert bitwise equality between the two.

namespace snapstack::serial {

using detail::check_matmul;
using detail::check_pool_input;
using detail::conv_dims;

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_matmul(a, b);
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor c = Tensor::zeros({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += pa[i * k + l] * pb[l * n + j];
            pc[i * n + j] = acc;
        }
    return c;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    const auto d = conv_dims(x, kernel, &bias);
    Tensor y = Tensor::zeros({d.n, d.oh, d.ow, d.cout});
    const double* px = x.data();
    const double* pk = kernel.data();
    const double* pbias = bias.data();
    double* py = y.data();
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t oh = 0; oh < d.oh; ++oh)
            for (std::size_t ow = 0; ow < d.ow; ++ow)
                for (std::size_t co = 0; co < d.cout; ++co) {
                    double acc = pbias[co];
                    for (std::size_t kh = 0; kh < d.kh; ++kh)
                        for (std::size_t kw = 0; kw < d.kw; ++kw)
                            for (std::size_t ci = 0; ci < d.cin; ++ci)
                                acc += px[((n * d.h + oh + kh) * d.w + ow + kw) * d.cin + ci] *
                                       pk[((kh * d.kw + kw) * d.cin + ci) * d.cout + co];
                    py[((n * d.oh + oh) * d.ow + ow) * d.cout + co] = acc;
                }
    return y;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel,
                         std::size_t in_h, std::size_t in_w) {
    if (grad_out.rank() != 4 || kernel.rank() != 4)
        throw std::invalid_argument("conv2d_grad_input wants [N,OH,OW,Cout] and [kh,kw,Cin,Cout]");
    const std::size_t n = grad_out.extent(0), oh = grad_out.extent(1), ow = grad_out.extent(2),
                      cout = grad_out.extent(3);
    const std::size_t kh = kernel.extent(0), kw = kernel.extent(1), cin = kernel.extent(2);
    if (kernel.extent(3) != cout) throw std::invalid_argument("conv2d_grad_input channel mismatch");
    if (in_h != oh + kh - 1 || in_w != ow + kw - 1)
        throw std::invalid_argument("conv2d_grad_input shape mismatch");
    Tensor gx = Tensor::zeros({n, in_h, in_w, cin});
    const double* pg = grad_out.data();
    const double* pk = kernel.data();
    double* px = gx.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ih = 0; ih < in_h; ++ih)
            for (std::size_t iw = 0; iw < in_w; ++iw)
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    double acc = 0.0;
                    for (std::size_t dh = 0; dh < kh; ++dh) {
                        if (ih < dh) break;
                        const std::size_t sh = ih - dh;
                        if (sh >= oh) continue;
                        for (std::size_t dw = 0; dw < kw; ++dw) {
                            if (iw < dw) break;
                            const std::size_t sw = iw - dw;
                            if (sw >= ow) continue;
                            for (std::size_t co = 0; co < cout; ++co)
                                acc += pg[((b * oh + sh) * ow + sw) * cout + co] *
                                       pk[((dh * kw + dw) * cin + ci) * cout + co];
                        }
                    }
                    px[((b * in_h + ih) * in_w + iw) * cin + ci] = acc;
                }
    return gx;
}

Tensor conv2d_grad_kernel(const Tensor& x, const Tensor& grad_out,
                          std::size_t kh, std::size_t kw) {
    if (x.rank() != 4 || grad_out.rank() != 4)
        throw std::invalid_argument("conv2d_grad_kernel wants rank-4 tensors");
    const std::size_t n = x.extent(0), h = x.extent(1), w = x.extent(2), cin = x.extent(3);
    const std::size_t oh = grad_out.extent(1), ow = grad_out.extent(2), cout = grad_out.extent(3);
    if (grad_out.extent(0) != n || oh != h - kh + 1 || ow != w - kw + 1)
        throw std::invalid_argument("conv2d_grad_kernel shape mismatch");
    Tensor gk = Tensor::zeros({kh, kw, cin, cout});
    const double* px = x.data();
    const double* pg = grad_out.data();
    double* pk = gk.data();
    for (std::size_t dh = 0; dh < kh; ++dh)
        for (std::size_t dw = 0; dw < kw; ++dw)
            for (std::size_t ci = 0; ci < cin; ++ci)
                for (std::size_t co = 0; co < cout; ++co) {
                    double acc = 0.0;
                    for (std::size_t b = 0; b < n; ++b)
                        for (std::size_t sh = 0; sh < oh; ++sh)
                            for (std::size_t sw = 0; sw < ow; ++sw)
                                acc += px[((b * h + sh + dh) * w + sw + dw) * cin + ci] *
                                       pg[((b * oh + sh) * ow + sw) * cout + co];
                    pk[((dh * kw + dw) * cin + ci) * cout + co] = acc;
                }
    return gk;
}

Tensor maxpool2x2_forward(const Tensor& x) {
    check_pool_input(x);
    const std::size_t n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor y = Tensor::zeros({n, oh, ow, c});
    const double* px = x.data();
    double* py = y.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double best = px[((b * h + 2 * i) * w + 2 * j) * c + ch];
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj) {
                            const double v =
                                px[((b * h + 2 * i + di) * w + 2 * j + dj) * c + ch];
                            if (v > best) best = v;
                        }
                    py[((b * oh + i) * ow + j) * c + ch] = best;
                }
    return y;
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw std::invalid_argument("global_avg_pool input must be [N,H,W,C]");
    const std::size_t n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    Tensor y = Tensor::zeros({n, c});
    const double* px = x.data();
    double* py = y.data();
    const double inv = 1.0 / static_cast<double>(h * w);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) acc += px[((b * h + i) * w + j) * c + ch];
            py[b * c + ch] = acc * inv;
        }
    return y;
}

}  // namespace snapstack::serial
