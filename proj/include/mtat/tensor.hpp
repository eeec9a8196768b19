// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mtat {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles with shape metadata.
///
/// Every tensor handed out by a public op is finite; ops call `check_finite`
/// on their results and raise NumericError otherwise.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor identity(std::size_t n);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    /// Rank-2 literal, e.g. `Tensor::matrix({{1, 2}, {3, 4}})`.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
    static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Rank-2 access (row, col); no bounds checks.
    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    // Rank-3 access (i, j, k).
    double& at3(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at3(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    std::span<const double> row(std::size_t r) const;
    std::span<double> row(std::size_t r);

    /// Same data, new shape. Element counts must agree.
    Tensor reshaped(Shape shape) const;

    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return dim(1); }

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Throws NumericError naming `what` if any element is NaN or infinite.
void check_finite(const Tensor& t, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);
double sum(const Tensor& t);
double l2_norm(const Tensor& t);

/// Order-sensitive FNV-1a hash of the raw bytes; used as a parameter checksum.
std::uint64_t checksum(const Tensor& t);

}  // namespace mtat
