// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>

#include "mtat/counter.hpp"
#include "mtat/tensor.hpp"

// Plain (non-recording) tensor kernels. The autograd layer wraps these.
namespace mtat::ops {

/// a[m×k] · b[k×p]. Books m·k·p MACs on `mac`.
Tensor matmul(const Tensor& a, const Tensor& b, MacTag mac = {});
/// a[m×k] · b[p×k]ᵀ without materializing the transpose. Books m·k·p MACs.
Tensor matmul_nt(const Tensor& a, const Tensor& b, MacTag mac = {});
/// a[k×m]ᵀ · b[k×p]. Books m·k·p MACs.
Tensor matmul_tn(const Tensor& a, const Tensor& b, MacTag mac = {});
Tensor transpose(const Tensor& a);

/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
/// Vector-Jacobian product of softmax_rows given its output `y`.
Tensor softmax_rows_backward(const Tensor& y, const Tensor& grad);

/// Bin [floor(i·src/dst), ceil((i+1)·src/dst)) used by adaptive pooling.
struct PoolBin {
    std::size_t begin;
    std::size_t end;
};
PoolBin adaptive_bin(std::size_t i, std::size_t src, std::size_t dst);

/// x[H×W×d] → [h×w×d]; each output cell averages its bin, channels independent.
Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t h, std::size_t w, MacTag mac = {});
Tensor adaptive_avg_pool2d_backward(const Shape& in_shape, const Tensor& grad);
/// Number of input reads summed by adaptive pooling; N·d when bins tile exactly.
std::uint64_t adaptive_pool_macs(std::size_t H, std::size_t W, std::size_t h, std::size_t w,
                                 std::size_t d);

/// Per-channel 3×3 cross-correlation, stride 1, zero padding 1, no bias.
Tensor depthwise_conv3x3(const Tensor& x, const Tensor& kernels, MacTag mac = {});
struct DwConvGrads {
    Tensor input;
    Tensor kernels;
};
DwConvGrads depthwise_conv3x3_backward(const Tensor& x, const Tensor& kernels, const Tensor& grad);

/// Central-difference gradient of a scalar function, one element at a time.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps = 1e-6);

}  // namespace mtat::ops
