// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "mtat/diffusion.hpp"
#include "mtat/errors.hpp"
#include "mtat/util.hpp"

namespace mtat::diffusion {

Dataset synth_dataset(const DatasetSpec& spec) {
    if (spec.classes < 1) throw ConfigError("dataset: classes must be at least 1");
    if (spec.height < 1 || spec.width < 1 || spec.channels < 1) throw ConfigError("dataset: empty grid");
    Dataset ds;
    if (spec.size == 0) return ds;

    constexpr double pi = std::numbers::pi;
    std::mt19937_64 rng(derive_seed(spec.seed, "data"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto K = static_cast<double>(spec.classes);

    ds.samples.reserve(spec.size);
    for (std::size_t i = 0; i < spec.size; ++i) {
        const std::size_t label = i % spec.classes;
        const auto c = static_cast<double>(label);
        const double angle = pi * c / K;
        const double freq = 1.0 + static_cast<double>(label % 3);  // cycles across the grid
        const double blob_cx = 0.5 + 0.3 * std::cos(2.0 * pi * c / K);
        const double blob_cy = 0.5 + 0.3 * std::sin(2.0 * pi * c / K);

        const double phase = 2.0 * pi * unit(rng);
        const double amp = 0.8 + 0.4 * unit(rng);
        const double jx = 0.05 * (2.0 * unit(rng) - 1.0);
        const double jy = 0.05 * (2.0 * unit(rng) - 1.0);

        Sample s{Tensor({spec.height * spec.width, spec.channels}), label};
        for (std::size_t y = 0; y < spec.height; ++y) {
            const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(spec.height);
            for (std::size_t x = 0; x < spec.width; ++x) {
                const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(spec.width);
                const double proj = u * std::cos(angle) + v * std::sin(angle);
                const double dx = u - blob_cx - jx, dy = v - blob_cy - jy;
                const double blob = 2.0 * std::exp(-(dx * dx + dy * dy) / (2.0 * 0.15 * 0.15));
                for (std::size_t ch = 0; ch < spec.channels; ++ch) {
                    const double grating =
                        amp * std::cos(2.0 * pi * freq * proj + phase + 0.5 * pi * static_cast<double>(ch));
                    s.x(y * spec.width + x, ch) = grating + blob + 0.1 * gauss(rng);
                }
            }
        }
        ds.samples.push_back(std::move(s));
    }

    double total = 0.0, count = 0.0;
    for (const auto& s : ds.samples) {
        total += sum(s.x);
        count += static_cast<double>(s.x.size());
    }
    ds.mean = total / count;
    double var = 0.0;
    for (const auto& s : ds.samples)
        for (double v : s.x.data()) var += (v - ds.mean) * (v - ds.mean);
    ds.stddev = std::sqrt(var / count);
    if (ds.stddev == 0.0) ds.stddev = 1.0;
    for (auto& s : ds.samples)
        for (double& v : s.x.data()) v = (v - ds.mean) / ds.stddev;
    return ds;
}

Interpolated interpolate(const Tensor& x, const Tensor& eps, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("interpolate: t must lie in [0, 1]");
    if (x.shape() != eps.shape()) {
        throw DimensionError("interpolate: data " + shape_str(x.shape()) + " vs noise " + shape_str(eps.shape()));
    }
    Interpolated out{Tensor(x.shape()), Tensor(x.shape())};
    for (std::size_t i = 0; i < x.size(); ++i) {
        out.x_t[i] = (1.0 - t) * x[i] + t * eps[i];
        out.v_target[i] = eps[i] - x[i];
    }
    return out;
}

}  // namespace mtat::diffusion
