// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtat/counter.hpp"
#include "mtat/tensor.hpp"

namespace mtat {

class Tape;

/// A value flowing through differentiable ops.
///
/// Without a tape a Var is just an immutable tensor and ops compute plainly.
/// With a tape, every op touching it appends a record whose backward rule
/// runs during `Tape::backward`.
class Var {
public:
    static constexpr std::size_t kNoId = std::numeric_limits<std::size_t>::max();

    Var() = default;
    Var(Tensor value) : value_(std::make_shared<const Tensor>(std::move(value))) {}  // NOLINT: implicit by design of the API

    const Tensor& value() const { return *value_; }
    const Shape& shape() const { return value_->shape(); }
    bool recorded() const noexcept { return tape_ != nullptr; }
    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    std::shared_ptr<const Tensor> shared() const { return value_; }

private:
    friend class Tape;
    std::shared_ptr<const Tensor> value_ = std::make_shared<const Tensor>();
    Tape* tape_ = nullptr;
    std::size_t id_ = kNoId;
};

/// Gradient accumulators for a recorded graph; indexed by record id.
class Gradients {
public:
    explicit Gradients(std::vector<std::optional<Tensor>> grads) : grads_(std::move(grads)) {}
    /// Gradient w.r.t. `v`; zeros when `v` did not influence the output.
    Tensor of(const Var& v) const;
    bool reached(const Var& v) const;

private:
    std::vector<std::optional<Tensor>> grads_;
};

/// Single-threaded reverse-mode tape. Records are appended in creation order,
/// which is a topological order, so backward replays them in reverse.
class Tape {
public:
    /// Receives the output gradient and one accumulator slot per parent
    /// (null when that parent does not require a gradient).
    using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

    struct Record {
        std::string op;
        std::vector<std::size_t> parents;
        BackwardFn backward;  // empty for leaves
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers a differentiable input.
    Var leaf(Tensor value, std::string name = "leaf");
    /// Registers an existing value as a leaf without copying it.
    Var watch(const Var& value, std::string name = "leaf");

    /// Vector-Jacobian products of `output` seeded with `seed`. Consumes the tape.
    Gradients backward(const Var& output, const Tensor& seed);
    /// Seeds with ones; `output` must hold a single element.
    Gradients backward(const Var& output);

    void reset();
    std::size_t size() const noexcept { return records_.size(); }
    const Record& record(std::size_t id) const { return records_.at(id); }

    /// Creates the result of an op. Records it only if some parent is recorded.
    static Var apply(std::string op, Tensor out, std::initializer_list<const Var*> parents, BackwardFn fn);
    static Var apply(std::string op, Tensor out, std::span<const Var> parents, BackwardFn fn);

private:
    Var push(std::string op, Var value, std::vector<std::size_t> parents, BackwardFn fn);

    std::vector<Record> records_;
    std::vector<Shape> shapes_;
    bool consumed_ = false;
};

// Differentiable ops. MAC tags only affect instrumentation.
Var matmul(const Var& a, const Var& b, MacTag mac = {});
Var matmul_nt(const Var& a, const Var& b, MacTag mac = {});
Var softmax_rows(const Var& x);
Var adaptive_avg_pool2d(const Var& x, std::size_t h, std::size_t w, MacTag mac = {});
Var depthwise_conv3x3(const Var& x, const Var& kernels, MacTag mac = {});

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a[r×c] + b broadcast over rows; b has c elements.
Var add_row(const Var& a, const Var& b);
Var reshape(const Var& a, Shape shape);
Var slice_cols(const Var& a, std::size_t begin, std::size_t width);
Var concat_cols(std::span<const Var> parts);
/// Row `i` of a rank-2 tensor as a [1×c] tensor.
Var take_row(const Var& a, std::size_t i);
/// Per-row standardization without affine parameters.
Var layer_norm_rows(const Var& a, double eps = 1e-6);
Var silu(const Var& a);
Var sum_all(const Var& a);
Var mean_all(const Var& a);
/// Mean squared difference, as a single-element tensor.
Var mse(const Var& a, const Var& b);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }

}  // namespace mtat
