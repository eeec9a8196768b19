// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mtat/attention.hpp"
#include "mtat/tensor.hpp"

namespace mtat {

/// A discrete probability vector. Inputs within 1e-6 of unit mass are
/// renormalized; anything further off is rejected.
class Distribution {
public:
    explicit Distribution(std::vector<double> probs);
    static Distribution from_span(std::span<const double> probs) { return Distribution({probs.begin(), probs.end()}); }

    std::span<const double> probs() const noexcept { return probs_; }
    std::size_t size() const noexcept { return probs_.size(); }

private:
    std::vector<double> probs_;
};

/// Σ p1·(ln p1 − ln p2) with 0·ln 0 = 0; +∞ when p1 has mass where p2 has none.
double kl_divergence(const Distribution& p1, const Distribution& p2);
double kl_divergence(std::span<const double> p1, std::span<const double> p2);

/// ½[KL(p1‖m) + KL(p2‖m)], m = ½(p1 + p2). Finite, in [0, ln 2], and exactly symmetric.
double js_divergence(const Distribution& p1, const Distribution& p2);
double js_divergence(std::span<const double> p1, std::span<const double> p2);

struct RedundancyOptions {
    /// Max number of row pairs to evaluate per head; 0 means all pairs.
    std::uint64_t pair_cap = 0;
    std::uint64_t seed = 0;
};

/// Mean pairwise JSD between attention rows, averaged over heads:
/// S = 2 / (M·N·(N−1)) · Σ_m Σ_{i1<i2} JSD(A_i1, A_i2).
/// Low scores mean redundant (mutually similar) attention rows.
double redundancy_score(std::span<const Tensor> head_maps, const RedundancyOptions& opts = {});
/// Full maps are used as-is; mediated maps are composed to N×N first.
double redundancy_score(const AttentionMaps& maps, const RedundancyOptions& opts = {});

/// Layer × step grid of redundancy scores averaged over samples.
struct RedundancyTrace {
    std::vector<std::vector<double>> scores;  // [layer][step]
    std::string model_id;
    std::size_t samples = 0;
    std::size_t heads = 0;

    std::size_t layers() const { return scores.size(); }
    std::size_t steps() const { return scores.empty() ? 0 : scores.front().size(); }
};

struct TraceMeta {
    std::string model_id;
    std::size_t heads = 0;
};

/// per_sample[s][step][layer] → averaged trace.
RedundancyTrace trace_from_scores(const std::vector<std::vector<std::vector<double>>>& per_sample,
                                  const TraceMeta& meta);

/// maps[s][step][layer] → trace; scores each layer's maps, then averages over samples.
RedundancyTrace trace_over_steps(const std::vector<std::vector<std::vector<AttentionMaps>>>& maps,
                                 const TraceMeta& meta, const RedundancyOptions& opts = {});

/// CSV with header `layer,step,score,samples,heads`, one row per (layer, step).
void write_trace_csv(std::ostream& os, const RedundancyTrace& trace);

}  // namespace mtat
