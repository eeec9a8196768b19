// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mtat/errors.hpp"

namespace mtat::ops {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(t.shape()));
    }
}

std::string pair_str(const Tensor& a, const Tensor& b) {
    return shape_str(a.shape()) + " and " + shape_str(b.shape());
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, MacTag mac) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
    if (b.rows() != k) throw DimensionError("matmul: inner extents differ for " + pair_str(a, b));
    Tensor out({m, p});
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data().data() + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = a(i, kk);
            const double* brow = b.data().data() + kk * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
        }
    }
    mac.add(static_cast<std::uint64_t>(m) * k * p);
    check_finite(out, "matmul");
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b, MacTag mac) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), p = b.rows();
    if (b.cols() != k) throw DimensionError("matmul_nt: inner extents differ for " + pair_str(a, b));
    Tensor out({m, p});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data().data() + i * k;
        for (std::size_t j = 0; j < p; ++j) {
            const double* brow = b.data().data() + j * k;
            double s = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            out(i, j) = s;
        }
    }
    mac.add(static_cast<std::uint64_t>(m) * k * p);
    check_finite(out, "matmul_nt");
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b, MacTag mac) {
    require_rank(a, 2, "matmul_tn");
    require_rank(b, 2, "matmul_tn");
    const std::size_t k = a.rows(), m = a.cols(), p = b.cols();
    if (b.rows() != k) throw DimensionError("matmul_tn: inner extents differ for " + pair_str(a, b));
    Tensor out({m, p});
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* arow = a.data().data() + kk * m;
        const double* brow = b.data().data() + kk * p;
        for (std::size_t i = 0; i < m; ++i) {
            const double aki = arow[i];
            double* orow = out.data().data() + i * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += aki * brow[j];
        }
    }
    mac.add(static_cast<std::uint64_t>(m) * k * p);
    check_finite(out, "matmul_tn");
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    require_rank(x, 2, "softmax_rows");
    check_finite(x, "softmax_rows input");
    Tensor out(x.shape());
    const std::size_t c = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        const double mx = c ? *std::max_element(in.begin(), in.end()) : 0.0;
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            o[j] = std::exp(in[j] - mx);
            z += o[j];
        }
        for (std::size_t j = 0; j < c; ++j) o[j] /= z;
    }
    return out;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& grad) {
    Tensor out(y.shape());
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto gr = grad.row(r);
        double dot = 0.0;
        for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
        auto o = out.row(r);
        for (std::size_t j = 0; j < yr.size(); ++j) o[j] = yr[j] * (gr[j] - dot);
    }
    return out;
}

PoolBin adaptive_bin(std::size_t i, std::size_t src, std::size_t dst) {
    return {(i * src) / dst, ((i + 1) * src + dst - 1) / dst};
}

namespace {

void check_pool_target(const Tensor& x, std::size_t h, std::size_t w) {
    require_rank(x, 3, "adaptive_avg_pool2d");
    if (h < 1 || w < 1 || h > x.dim(0) || w > x.dim(1)) {
        throw DimensionError("adaptive_avg_pool2d: target " + std::to_string(h) + "x" + std::to_string(w) +
                             " invalid for input " + shape_str(x.shape()));
    }
}

}  // namespace

Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t h, std::size_t w, MacTag mac) {
    check_pool_target(x, h, w);
    const std::size_t H = x.dim(0), W = x.dim(1), d = x.dim(2);
    Tensor out({h, w, d});
    std::uint64_t reads = 0;
    for (std::size_t i = 0; i < h; ++i) {
        const auto rb = adaptive_bin(i, H, h);
        for (std::size_t j = 0; j < w; ++j) {
            const auto cb = adaptive_bin(j, W, w);
            const double inv = 1.0 / static_cast<double>((rb.end - rb.begin) * (cb.end - cb.begin));
            for (std::size_t c = 0; c < d; ++c) {
                double s = 0.0;
                for (std::size_t y = rb.begin; y < rb.end; ++y)
                    for (std::size_t xx = cb.begin; xx < cb.end; ++xx) s += x.at3(y, xx, c);
                out.at3(i, j, c) = s * inv;
            }
            reads += (rb.end - rb.begin) * (cb.end - cb.begin) * d;
        }
    }
    mac.add(reads);
    check_finite(out, "adaptive_avg_pool2d");
    return out;
}

Tensor adaptive_avg_pool2d_backward(const Shape& in_shape, const Tensor& grad) {
    Tensor out(in_shape);
    const std::size_t H = in_shape[0], W = in_shape[1], d = in_shape[2];
    const std::size_t h = grad.dim(0), w = grad.dim(1);
    for (std::size_t i = 0; i < h; ++i) {
        const auto rb = adaptive_bin(i, H, h);
        for (std::size_t j = 0; j < w; ++j) {
            const auto cb = adaptive_bin(j, W, w);
            const double inv = 1.0 / static_cast<double>((rb.end - rb.begin) * (cb.end - cb.begin));
            for (std::size_t y = rb.begin; y < rb.end; ++y)
                for (std::size_t xx = cb.begin; xx < cb.end; ++xx)
                    for (std::size_t c = 0; c < d; ++c) out.at3(y, xx, c) += grad.at3(i, j, c) * inv;
        }
    }
    return out;
}

std::uint64_t adaptive_pool_macs(std::size_t H, std::size_t W, std::size_t h, std::size_t w, std::size_t d) {
    std::uint64_t rows = 0, cols = 0;
    for (std::size_t i = 0; i < h; ++i) {
        const auto b = adaptive_bin(i, H, h);
        rows += b.end - b.begin;
    }
    for (std::size_t j = 0; j < w; ++j) {
        const auto b = adaptive_bin(j, W, w);
        cols += b.end - b.begin;
    }
    return rows * cols * d;
}

namespace {

void check_dw(const Tensor& x, const Tensor& kernels) {
    require_rank(x, 3, "depthwise_conv3x3");
    if (kernels.shape() != Shape{3, 3, x.dim(2)}) {
        throw DimensionError("depthwise_conv3x3: kernels " + shape_str(kernels.shape()) +
                             " do not match input " + shape_str(x.shape()) + " (expected 3x3xd)");
    }
    if (x.dim(0) < 1 || x.dim(1) < 1) throw DimensionError("depthwise_conv3x3: empty spatial grid");
}

}  // namespace

Tensor depthwise_conv3x3(const Tensor& x, const Tensor& kernels, MacTag mac) {
    check_dw(x, kernels);
    const std::size_t H = x.dim(0), W = x.dim(1), d = x.dim(2);
    Tensor out(x.shape());
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(ky) - 1;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx) + static_cast<std::ptrdiff_t>(kx) - 1;
                    if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
                    for (std::size_t c = 0; c < d; ++c) {
                        out.at3(y, xx, c) += x.at3(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c) *
                                             kernels.at3(ky, kx, c);
                    }
                }
            }
        }
    }
    // Padded taps are counted: 9 MACs per output element.
    mac.add(9ULL * H * W * d);
    check_finite(out, "depthwise_conv3x3");
    return out;
}

DwConvGrads depthwise_conv3x3_backward(const Tensor& x, const Tensor& kernels, const Tensor& grad) {
    const std::size_t H = x.dim(0), W = x.dim(1), d = x.dim(2);
    DwConvGrads g{Tensor(x.shape()), Tensor(kernels.shape())};
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(ky) - 1;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx) + static_cast<std::ptrdiff_t>(kx) - 1;
                    if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
                    const auto uy = static_cast<std::size_t>(sy), ux = static_cast<std::size_t>(sx);
                    for (std::size_t c = 0; c < d; ++c) {
                        const double go = grad.at3(y, xx, c);
                        g.input.at3(uy, ux, c) += go * kernels.at3(ky, kx, c);
                        g.kernels.at3(ky, kx, c) += go * x.at3(uy, ux, c);
                    }
                }
            }
        }
    }
    return g;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
    if (!(eps > 0.0)) throw DomainError("finite_diff_grad: eps must be positive");
    Tensor probe = x;
    Tensor grad(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double fp = f(probe);
        probe[i] = orig - eps;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_diff_grad: non-finite evaluation at element " + std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

}  // namespace mtat::ops
