#include "snapstack/kernels.hpp"

#include <stdexcept>

#include "kernel_checks.hpp"

namespace snapstack::kernels {

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
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        const double* arow = pa + i * k;
        double* crow = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += arow[l] * pb[l * n + j];
            crow[j] = acc;
        }
    }
    return c;
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose2d needs a rank-2 tensor");
    const std::size_t m = a.extent(0), n = a.extent(1);
    Tensor t = Tensor::zeros({n, m});
    const double* pa = a.data();
    double* pt = t.data();
#pragma omp parallel for schedule(static)
    for (long long j = 0; j < static_cast<long long>(n); ++j)
        for (std::size_t i = 0; i < m; ++i) pt[j * m + i] = pa[i * n + j];
    return t;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    const auto d = conv_dims(x, kernel, &bias);
    Tensor y = Tensor::zeros({d.n, d.oh, d.ow, d.cout});
    const double* px = x.data();
    const double* pk = kernel.data();
    const double* pbias = bias.data();
    double* py = y.data();
    const std::size_t rows = d.n * d.oh;
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(rows); ++r) {
        const std::size_t n = static_cast<std::size_t>(r) / d.oh;
        const std::size_t oh = static_cast<std::size_t>(r) % d.oh;
        for (std::size_t ow = 0; ow < d.ow; ++ow) {
            double* out = py + ((n * d.oh + oh) * d.ow + ow) * d.cout;
            for (std::size_t co = 0; co < d.cout; ++co) {
                double acc = pbias[co];
                for (std::size_t kh = 0; kh < d.kh; ++kh) {
                    const double* xrow = px + ((n * d.h + oh + kh) * d.w + ow) * d.cin;
                    const double* krow = pk + kh * d.kw * d.cin * d.cout;
                    for (std::size_t kw = 0; kw < d.kw; ++kw)
                        for (std::size_t ci = 0; ci < d.cin; ++ci)
                            acc += xrow[kw * d.cin + ci] * krow[(kw * d.cin + ci) * d.cout + co];
                }
                out[co] = acc;
            }
        }
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
    const std::size_t rows = n * in_h;
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(rows); ++r) {
        const std::size_t b = static_cast<std::size_t>(r) / in_h;
        const std::size_t ih = static_cast<std::size_t>(r) % in_h;
        for (std::size_t iw = 0; iw < in_w; ++iw) {
            double* out = px + ((b * in_h + ih) * in_w + iw) * cin;
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
                        const double* grow = pg + ((b * oh + sh) * ow + sw) * cout;
                        const double* krow = pk + ((dh * kw + dw) * cin + ci) * cout;
                        for (std::size_t co = 0; co < cout; ++co) acc += grow[co] * krow[co];
                    }
                }
                out[ci] = acc;
            }
        }
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
    const std::size_t out_elems = kh * kw * cin * cout;
#pragma omp parallel for schedule(static)
    for (long long e = 0; e < static_cast<long long>(out_elems); ++e) {
        std::size_t rem = static_cast<std::size_t>(e);
        const std::size_t co = rem % cout;
        rem /= cout;
        const std::size_t ci = rem % cin;
        rem /= cin;
        const std::size_t dw = rem % kw;
        const std::size_t dh = rem / kw;
        double acc = 0.0;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t sh = 0; sh < oh; ++sh) {
                const double* xrow = px + ((b * h + sh + dh) * w + dw) * cin + ci;
                const double* grow = pg + ((b * oh + sh) * ow) * cout + co;
                for (std::size_t sw = 0; sw < ow; ++sw)
                    acc += xrow[sw * cin] * grow[sw * cout];
            }
        pk[static_cast<std::size_t>(e)] = acc;
    }
    return gk;
}

Tensor conv2d_grad_bias(const Tensor& grad_out) {
    if (grad_out.rank() != 4) throw std::invalid_argument("conv2d_grad_bias wants [N,OH,OW,Cout]");
    const std::size_t cout = grad_out.extent(3);
    const std::size_t spatial = grad_out.size() / cout;
    Tensor gb = Tensor::zeros({cout});
    const double* pg = grad_out.data();
    double* pb = gb.data();
#pragma omp parallel for schedule(static)
    for (long long co = 0; co < static_cast<long long>(cout); ++co) {
        double acc = 0.0;
        for (std::size_t s = 0; s < spatial; ++s) acc += pg[s * cout + co];
        pb[co] = acc;
    }
    return gb;
}

Tensor maxpool2x2_forward(const Tensor& x) {
    check_pool_input(x);
    const std::size_t n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor y = Tensor::zeros({n, oh, ow, c});
    const double* px = x.data();
    double* py = y.data();
    const std::size_t rows = n * oh;
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(rows); ++r) {
        const std::size_t b = static_cast<std::size_t>(r) / oh;
        const std::size_t i = static_cast<std::size_t>(r) % oh;
        for (std::size_t j = 0; j < ow; ++j)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double best = px[((b * h + 2 * i) * w + 2 * j) * c + ch];
                for (int di = 0; di < 2; ++di)
                    for (int dj = 0; dj < 2; ++dj) {
                        const double v = px[((b * h + 2 * i + di) * w + 2 * j + dj) * c + ch];
                        if (v > best) best = v;
                    }
                py[((b * oh + i) * ow + j) * c + ch] = best;
            }
    }
    return y;
}

Tensor maxpool2x2_backward(const Tensor& x, const Tensor& grad_out) {
    check_pool_input(x);
    const std::size_t n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    const std::size_t oh = h / 2, ow = w / 2;
    if (grad_out.shape() != std::vector<std::size_t>{n, oh, ow, c})
        throw std::invalid_argument("maxpool2x2_backward gradient shape mismatch");
    Tensor gx = Tensor::zeros({n, h, w, c});
    const double* px = x.data();
    const double* pg = grad_out.data();
    double* pgx = gx.data();
    const std::size_t rows = n * oh;
    // Windows are disjoint, so writing per window is race-free.
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(rows); ++r) {
        const std::size_t b = static_cast<std::size_t>(r) / oh;
        const std::size_t i = static_cast<std::size_t>(r) % oh;
        for (std::size_t j = 0; j < ow; ++j)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double best = px[((b * h + 2 * i) * w + 2 * j) * c + ch];
                int bi = 0, bj = 0;
                for (int di = 0; di < 2; ++di)
                    for (int dj = 0; dj < 2; ++dj) {
                        const double v = px[((b * h + 2 * i + di) * w + 2 * j + dj) * c + ch];
                        if (v > best) {
                            best = v;
                            bi = di;
                            bj = dj;
                        }
                    }
                pgx[((b * h + 2 * i + bi) * w + 2 * j + bj) * c + ch] +=
                    pg[((b * oh + i) * ow + j) * c + ch];
            }
    }
    return gx;
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw std::invalid_argument("global_avg_pool input must be [N,H,W,C]");
    const std::size_t n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    Tensor y = Tensor::zeros({n, c});
    const double* px = x.data();
    double* py = y.data();
    const double inv = 1.0 / static_cast<double>(h * w);
#pragma omp parallel for schedule(static)
    for (long long e = 0; e < static_cast<long long>(n * c); ++e) {
        const std::size_t b = static_cast<std::size_t>(e) / c;
        const std::size_t ch = static_cast<std::size_t>(e) % c;
        double acc = 0.0;
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) acc += px[((b * h + i) * w + j) * c + ch];
        py[static_cast<std::size_t>(e)] = acc * inv;
    }
    return y;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, std::size_t h, std::size_t w) {
    if (grad_out.rank() != 2) throw std::invalid_argument("global_avg_pool grad must be [N,C]");
    const std::size_t n = grad_out.extent(0), c = grad_out.extent(1);
    Tensor gx = Tensor::zeros({n, h, w, c});
    const double* pg = grad_out.data();
    double* px = gx.data();
    const double inv = 1.0 / static_cast<double>(h * w);
#pragma omp parallel for schedule(static)
    for (long long e = 0; e < static_cast<long long>(gx.size()); ++e) {
        const std::size_t ch = static_cast<std::size_t>(e) % c;
        const std::size_t b = static_cast<std::size_t>(e) / (h * w * c);
        px[static_cast<std::size_t>(e)] = pg[b * c + ch] * inv;
    }
    return gx;
}

void channel_moments(const Tensor& x, std::vector<double>& mean, std::vector<double>& var) {
    std::size_t c, rows;
    if (x.rank() == 4) {
        c = x.extent(3);
        rows = x.size() / c;
    } else if (x.rank() == 2) {
        c = x.extent(1);
        rows = x.extent(0);
    } else {
        throw std::invalid_argument("channel_moments wants [N,H,W,C] or [N,C]");
    }
    mean.assign(c, 0.0);
    var.assign(c, 0.0);
    const double* px = x.data();
    const double inv = 1.0 / static_cast<double>(rows);
#pragma omp parallel for schedule(static)
    for (long long ch = 0; ch < static_cast<long long>(c); ++ch) {
        double m = 0.0;
        for (std::size_t r = 0; r < rows; ++r) m += px[r * c + ch];
        m *= inv;
        double v = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const double d = px[r * c + ch] - m;
            v += d * d;
        }
        mean[static_cast<std::size_t>(ch)] = m;
        var[static_cast<std::size_t>(ch)] = v * inv;
    }
}

}  // namespace snapstack::kernels
