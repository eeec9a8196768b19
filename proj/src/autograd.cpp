// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtat/autograd.hpp"

#include <cmath>

#include "mtat/errors.hpp"
#include "mtat/ops.hpp"

namespace mtat {

Tensor Gradients::of(const Var& v) const {
    if (reached(v)) return *grads_[v.id()];
    return Tensor(v.shape());
}

bool Gradients::reached(const Var& v) const {
    return v.recorded() && v.id() < grads_.size() && grads_[v.id()].has_value();
}

Var Tape::leaf(Tensor value, std::string name) {
    if (consumed_) throw UsageError("tape already consumed by backward(); call reset() first");
    return push("leaf:" + name, Var(std::move(value)), {}, {});
}

Var Tape::watch(const Var& value, std::string name) {
    if (consumed_) throw UsageError("tape already consumed by backward(); call reset() first");
    if (value.recorded()) throw UsageError("watch: value is already recorded");
    return push("leaf:" + name, value, {}, {});
}

Var Tape::push(std::string op, Var v, std::vector<std::size_t> parents, BackwardFn fn) {
    v.tape_ = this;
    v.id_ = records_.size();
    shapes_.push_back(v.shape());
    records_.push_back(Record{std::move(op), std::move(parents), std::move(fn)});
    return v;
}

Var Tape::apply(std::string op, Tensor out, std::initializer_list<const Var*> parents, BackwardFn fn) {
    std::vector<Var> ps;
    ps.reserve(parents.size());
    for (const Var* p : parents) ps.push_back(*p);
    return apply(std::move(op), std::move(out), std::span<const Var>(ps), std::move(fn));
}

Var Tape::apply(std::string op, Tensor out, std::span<const Var> parents, BackwardFn fn) {
    check_finite(out, op.c_str());
    Tape* tape = nullptr;
    for (const Var& p : parents) {
        if (!p.recorded()) continue;
        if (tape && tape != p.tape()) throw UsageError(op + ": operands recorded on different tapes");
        tape = p.tape();
    }
    if (!tape) return Var(std::move(out));
    if (tape->consumed_) throw UsageError(op + ": tape already consumed by backward(); call reset() first");
    std::vector<std::size_t> ids;
    ids.reserve(parents.size());
    for (const Var& p : parents) ids.push_back(p.recorded() ? p.id() : Var::kNoId);
    return tape->push(std::move(op), Var(std::move(out)), std::move(ids), std::move(fn));
}

Gradients Tape::backward(const Var& output, const Tensor& seed) {
    if (output.tape() != this) throw UsageError("backward: output was not recorded on this tape");
    if (consumed_) throw UsageError("backward: tape already consumed; call reset() first");
    if (seed.shape() != output.shape()) {
        throw DimensionError("backward: seed " + shape_str(seed.shape()) + " vs output " +
                             shape_str(output.shape()));
    }
    std::vector<std::optional<Tensor>> grads(records_.size());
    grads[output.id()] = seed;
    std::vector<Tensor*> slots;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
        const Record& rec = records_[i];
        if (!grads[i] || !rec.backward) continue;
        slots.assign(rec.parents.size(), nullptr);
        for (std::size_t p = 0; p < rec.parents.size(); ++p) {
            const std::size_t pid = rec.parents[p];
            if (pid == Var::kNoId) continue;
            if (!grads[pid]) grads[pid] = Tensor(shapes_[pid]);
            slots[p] = &*grads[pid];
        }
        rec.backward(*grads[i], slots);
    }
    consumed_ = true;
    return Gradients(std::move(grads));
}

Gradients Tape::backward(const Var& output) {
    if (output.value().size() != 1) {
        throw UsageError("backward: implicit seed needs a single-element output, got " +
                         shape_str(output.shape()));
    }
    return backward(output, Tensor::full(output.shape(), 1.0));
}

void Tape::reset() {
    records_.clear();
    shapes_.clear();
    consumed_ = false;
}

namespace {

void accumulate(Tensor* slot, const Tensor& g) {
    if (!slot) return;
    auto dst = slot->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void require_same_shape(const Var& a, const Var& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

}  // namespace

Var matmul(const Var& a, const Var& b, MacTag mac) {
    Tensor out = ops::matmul(a.value(), b.value(), mac);
    auto av = a.shared(), bv = b.shared();
    return Tape::apply("matmul", std::move(out), {&a, &b}, [av, bv](const Tensor& g, std::span<Tensor* const> s) {
        if (s[0]) accumulate(s[0], ops::matmul_nt(g, *bv));
        if (s[1]) accumulate(s[1], ops::matmul_tn(*av, g));
    });
}

Var matmul_nt(const Var& a, const Var& b, MacTag mac) {
    Tensor out = ops::matmul_nt(a.value(), b.value(), mac);
    auto av = a.shared(), bv = b.shared();
    return Tape::apply("matmul_nt", std::move(out), {&a, &b}, [av, bv](const Tensor& g, std::span<Tensor* const> s) {
        if (s[0]) accumulate(s[0], ops::matmul(g, *bv));
        if (s[1]) accumulate(s[1], ops::matmul_tn(g, *av));
    });
}

Var softmax_rows(const Var& x) {
    auto y = std::make_shared<const Tensor>(ops::softmax_rows(x.value()));
    return Tape::apply("softmax_rows", *y, {&x}, [y](const Tensor& g, std::span<Tensor* const> s) {
        accumulate(s[0], ops::softmax_rows_backward(*y, g));
    });
}

Var adaptive_avg_pool2d(const Var& x, std::size_t h, std::size_t w, MacTag mac) {
    Tensor out = ops::adaptive_avg_pool2d(x.value(), h, w, mac);
    Shape in_shape = x.shape();
    return Tape::apply("adaptive_avg_pool2d", std::move(out), {&x},
                       [in_shape](const Tensor& g, std::span<Tensor* const> s) {
                           accumulate(s[0], ops::adaptive_avg_pool2d_backward(in_shape, g));
                       });
}

Var depthwise_conv3x3(const Var& x, const Var& kernels, MacTag mac) {
    Tensor out = ops::depthwise_conv3x3(x.value(), kernels.value(), mac);
    auto xv = x.shared(), kv = kernels.shared();
    return Tape::apply("depthwise_conv3x3", std::move(out), {&x, &kernels},
                       [xv, kv](const Tensor& g, std::span<Tensor* const> s) {
                           auto grads = ops::depthwise_conv3x3_backward(*xv, *kv, g);
                           accumulate(s[0], grads.input);
                           accumulate(s[1], grads.kernels);
                       });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return Tape::apply("add", std::move(out), {&a, &b}, [](const Tensor& g, std::span<Tensor* const> s) {
        accumulate(s[0], g);
        accumulate(s[1], g);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return Tape::apply("sub", std::move(out), {&a, &b}, [](const Tensor& g, std::span<Tensor* const> s) {
        accumulate(s[0], g);
        if (s[1]) {
            auto dst = s[1]->data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= g[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    auto av = a.shared(), bv = b.shared();
    return Tape::apply("mul", std::move(out), {&a, &b}, [av, bv](const Tensor& g, std::span<Tensor* const> s) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (s[0]) (*s[0])[i] += g[i] * (*bv)[i];
            if (s[1]) (*s[1])[i] += g[i] * (*av)[i];
        }
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= factor;
    return Tape::apply("scale", std::move(out), {&a}, [factor](const Tensor& g, std::span<Tensor* const> s) {
        if (!s[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i] * factor;
    });
}

Var add_row(const Var& a, const Var& b) {
    if (a.value().rank() != 2 || b.value().size() != a.value().cols()) {
        throw DimensionError("add_row: cannot broadcast " + shape_str(b.shape()) + " over rows of " +
                             shape_str(a.shape()));
    }
    Tensor out = a.value();
    const std::size_t c = out.cols();
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) out(r, j) += b.value()[j];
    return Tape::apply("add_row", std::move(out), {&a, &b}, [c](const Tensor& g, std::span<Tensor* const> s) {
        accumulate(s[0], g);
        if (s[1]) {
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t j = 0; j < c; ++j) (*s[1])[j] += g(r, j);
        }
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    Shape in_shape = a.shape();
    return Tape::apply("reshape", std::move(out), {&a}, [in_shape](const Tensor& g, std::span<Tensor* const> s) {
        if (s[0]) accumulate(s[0], g.reshaped(in_shape));
    });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t width) {
    const Tensor& x = a.value();
    if (x.rank() != 2 || begin + width > x.cols()) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + width) +
                             ") out of range for " + shape_str(x.shape()));
    }
    Tensor out({x.rows(), width});
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t j = 0; j < width; ++j) out(r, j) = x(r, begin + j);
    return Tape::apply("slice_cols", std::move(out), {&a}, [begin, width](const Tensor& g, std::span<Tensor* const> s) {
        if (!s[0]) return;
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < width; ++j) (*s[0])(r, begin + j) += g(r, j);
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t rows = parts[0].value().rows();
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.value().rank() != 2 || p.value().rows() != rows) {
            throw DimensionError("concat_cols: row count mismatch at " + shape_str(p.shape()));
        }
        offsets.push_back(total);
        total += p.value().cols();
    }
    Tensor out({rows, total});
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& x = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < x.cols(); ++j) out(r, offsets[k] + j) = x(r, j);
    }
    return Tape::apply("concat_cols", std::move(out), parts, [offsets](const Tensor& g, std::span<Tensor* const> s) {
        for (std::size_t k = 0; k < s.size(); ++k) {
            if (!s[k]) continue;
            Tensor& dst = *s[k];
            for (std::size_t r = 0; r < dst.rows(); ++r)
                for (std::size_t j = 0; j < dst.cols(); ++j) dst(r, j) += g(r, offsets[k] + j);
        }
    });
}

Var take_row(const Var& a, std::size_t i) {
    const Tensor& x = a.value();
    if (x.rank() != 2 || i >= x.rows()) {
        throw DimensionError("take_row: row " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
    }
    Tensor out({1, x.cols()});
    for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) = x(i, j);
    return Tape::apply("take_row", std::move(out), {&a}, [i](const Tensor& g, std::span<Tensor* const> s) {
        if (!s[0]) return;
        for (std::size_t j = 0; j < g.cols(); ++j) (*s[0])(i, j) += g(0, j);
    });
}

Var layer_norm_rows(const Var& a, double eps) {
    const Tensor& x = a.value();
    if (x.rank() != 2) throw DimensionError("layer_norm_rows: expected rank 2, got " + shape_str(x.shape()));
    const std::size_t c = x.cols();
    auto xhat = std::make_shared<Tensor>(x.shape());
    auto inv_std = std::make_shared<std::vector<double>>(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < c; ++j) (*xhat)(r, j) = (row[j] - mean) * is;
    }
    return Tape::apply("layer_norm_rows", *xhat, {&a}, [xhat, inv_std, c](const Tensor& g, std::span<Tensor* const> s) {
        if (!s[0]) return;
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double gsum = 0.0, gx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                gsum += g(r, j);
                gx += g(r, j) * (*xhat)(r, j);
            }
            for (std::size_t j = 0; j < c; ++j) {
                (*s[0])(r, j) += (*inv_std)[r] * (g(r, j) - inv_c * gsum - (*xhat)(r, j) * inv_c * gx);
            }
        }
    });
}

Var silu(const Var& a) {
    Tensor out = a.value();
    auto xv = a.shared();
    for (auto& v : out.data()) v = v / (1.0 + std::exp(-v));
    return Tape::apply("silu", std::move(out), {&a}, [xv](const Tensor& g, std::span<Tensor* const> s) {
        if (!s[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = (*xv)[i];
            const double sig = 1.0 / (1.0 + std::exp(-x));
            (*s[0])[i] += g[i] * sig * (1.0 + x * (1.0 - sig));
        }
    });
}

Var sum_all(const Var& a) {
    Tensor out = Tensor::scalar(sum(a.value()));
    return Tape::apply("sum_all", std::move(out), {&a}, [](const Tensor& g, std::span<Tensor* const> s) {
        if (!s[0]) return;
        for (auto& v : s[0]->data()) v += g[0];
    });
}

Var mean_all(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) throw DimensionError("mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / n);
}

Var mse(const Var& a, const Var& b) {
    Var d = sub(a, b);
    return mean_all(mul(d, d));
}

}  // namespace mtat
