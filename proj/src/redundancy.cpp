// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtat/redundancy.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <ranges>

#include "mtat/errors.hpp"
#include "mtat/io.hpp"
#include "mtat/util.hpp"

namespace mtat {

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
    double total = 0.0;
    for (double p : probs_) {
        if (!std::isfinite(p) || p < 0.0) throw DomainError("distribution: entries must be finite and non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw DomainError("distribution: mass " + io::format_double(total) + " is not within 1e-6 of 1");
    }
    if (total != 1.0) {
        for (double& p : probs_) p /= total;
    }
}

double kl_divergence(std::span<const double> p1, std::span<const double> p2) {
    if (p1.size() != p2.size()) {
        throw DimensionError("kl_divergence: lengths " + std::to_string(p1.size()) + " and " +
                             std::to_string(p2.size()) + " differ");
    }
    double s = 0.0;
    for (std::size_t k = 0; k < p1.size(); ++k) {
        if (p1[k] == 0.0) continue;
        if (p2[k] == 0.0) return std::numeric_limits<double>::infinity();
        s += p1[k] * (std::log(p1[k]) - std::log(p2[k]));
    }
    return s;
}

double kl_divergence(const Distribution& p1, const Distribution& p2) {
    return kl_divergence(p1.probs(), p2.probs());
}

double js_divergence(std::span<const double> p1, std::span<const double> p2) {
    if (p1.size() != p2.size()) {
        throw DimensionError("js_divergence: lengths " + std::to_string(p1.size()) + " and " +
                             std::to_string(p2.size()) + " differ");
    }
    // Both halves accumulate separately and are added once at the end, so
    // swapping the arguments yields a bit-identical result.
    double from_p1 = 0.0, from_p2 = 0.0;
    for (std::size_t k = 0; k < p1.size(); ++k) {
        const double a = p1[k], b = p2[k];
        if (a == 0.0 && b == 0.0) continue;
        const double m = 0.5 * (a + b);
        const double log_m = std::log(m);
        if (a > 0.0) from_p1 += a * (std::log(a) - log_m);
        if (b > 0.0) from_p2 += b * (std::log(b) - log_m);
    }
    // Rounding can overshoot either bound by an ulp on disjoint or identical inputs.
    return std::clamp(0.5 * (from_p1 + from_p2), 0.0, std::numbers::ln2);
}

double js_divergence(const Distribution& p1, const Distribution& p2) {
    return js_divergence(p1.probs(), p2.probs());
}

namespace {

constexpr std::uint64_t kChunk = 4096;

void check_rows_stochastic(const Tensor& a) {
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (double p : a.row(r)) {
            if (!(p >= 0.0)) throw DomainError("redundancy_score: attention entries must be non-negative");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-6) {
            throw DomainError("redundancy_score: row " + std::to_string(r) + " sums to " + io::format_double(s));
        }
    }
}

struct PairIndex {
    std::vector<std::uint64_t> row_offsets;  // linear index of pair (i, i+1)

    explicit PairIndex(std::uint64_t n) : row_offsets(n) {
        std::uint64_t acc = 0;
        for (std::uint64_t i = 0; i < n; ++i) {
            row_offsets[i] = acc;
            acc += n - 1 - i;
        }
    }

    std::pair<std::size_t, std::size_t> decode(std::uint64_t linear) const {
        auto it = std::upper_bound(row_offsets.begin(), row_offsets.end(), linear);
        const auto i1 = static_cast<std::size_t>(std::distance(row_offsets.begin(), it) - 1);
        const auto i2 = static_cast<std::size_t>(i1 + 1 + (linear - row_offsets[i1]));
        return {i1, i2};
    }
};

// Fixed-chunk reduction: chunk sums in parallel, then summed in chunk order.
template <typename PairAt>
double sum_pairs(const Tensor& a, const PairIndex& index, std::uint64_t count, PairAt pair_at) {
    const std::uint64_t chunks = (count + kChunk - 1) / kChunk;
    std::vector<double> partial(chunks, 0.0);
    parallel_for(chunks, [&](std::size_t c) {
        const std::uint64_t begin = c * kChunk;
        const std::uint64_t end = std::min(count, begin + kChunk);
        double s = 0.0;
        for (std::uint64_t pos = begin; pos < end; ++pos) {
            const auto [i1, i2] = index.decode(pair_at(pos));
            s += js_divergence(a.row(i1), a.row(i2));
        }
        partial[c] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace

double redundancy_score(std::span<const Tensor> head_maps, const RedundancyOptions& opts) {
    if (head_maps.empty()) throw DomainError("redundancy_score: no heads");
    const std::size_t n = head_maps[0].rank() == 2 ? head_maps[0].rows() : 0;
    if (n < 2) throw DomainError("redundancy_score: need at least two tokens to form a pair");
    for (const Tensor& a : head_maps) {
        if (a.shape() != Shape{n, n}) {
            throw DimensionError("redundancy_score: expected " + std::to_string(n) + "x" + std::to_string(n) +
                                 " maps, got " + shape_str(a.shape()));
        }
        check_rows_stochastic(a);
    }
    const std::uint64_t total_pairs = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    const PairIndex index(n);

    std::vector<std::uint64_t> sampled;
    const bool subsample = opts.pair_cap != 0 && opts.pair_cap < total_pairs;
    if (subsample) {
        std::mt19937_64 rng(opts.seed);
        sampled.reserve(opts.pair_cap);
        std::vector<std::uint64_t> all(total_pairs);
        std::iota(all.begin(), all.end(), std::uint64_t{0});
        std::ranges::sample(all, std::back_inserter(sampled), static_cast<std::ptrdiff_t>(opts.pair_cap), rng);
    }
    const std::uint64_t used = subsample ? sampled.size() : total_pairs;

    double acc = 0.0;
    for (const Tensor& a : head_maps) {
        acc += subsample ? sum_pairs(a, index, used, [&](std::uint64_t pos) { return sampled[pos]; })
                         : sum_pairs(a, index, used, [](std::uint64_t pos) { return pos; });
    }
    const double heads = static_cast<double>(head_maps.size());
    const double norm = 2.0 / (heads * static_cast<double>(n) * static_cast<double>(n - 1));
    const double coverage = static_cast<double>(total_pairs) / static_cast<double>(used);
    return norm * acc * coverage;
}

double redundancy_score(const AttentionMaps& maps, const RedundancyOptions& opts) {
    const auto full = full_attention_maps(maps);
    return redundancy_score(std::span<const Tensor>(full), opts);
}

RedundancyTrace trace_from_scores(const std::vector<std::vector<std::vector<double>>>& per_sample,
                                  const TraceMeta& meta) {
    RedundancyTrace trace;
    trace.model_id = meta.model_id;
    trace.heads = meta.heads;
    trace.samples = per_sample.size();
    if (per_sample.empty()) return trace;
    const std::size_t steps = per_sample[0].size();
    const std::size_t layers = steps ? per_sample[0][0].size() : 0;
    for (std::size_t s = 0; s < per_sample.size(); ++s) {
        if (per_sample[s].size() != steps) {
            throw UsageError("trace_over_steps: sample " + std::to_string(s) + " has " +
                             std::to_string(per_sample[s].size()) + " steps, expected " + std::to_string(steps));
        }
        for (std::size_t t = 0; t < steps; ++t) {
            if (per_sample[s][t].size() != layers) {
                throw UsageError("trace_over_steps: inconsistent layer count at sample " + std::to_string(s) +
                                 ", step " + std::to_string(t));
            }
        }
    }
    trace.scores.assign(layers, std::vector<double>(steps, 0.0));
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t t = 0; t < steps; ++t) {
            double acc = 0.0;
            for (const auto& sample : per_sample) acc += sample[t][l];
            trace.scores[l][t] = acc / static_cast<double>(per_sample.size());
        }
    }
    return trace;
}

RedundancyTrace trace_over_steps(const std::vector<std::vector<std::vector<AttentionMaps>>>& maps,
                                 const TraceMeta& meta, const RedundancyOptions& opts) {
    std::vector<std::vector<std::vector<double>>> scores(maps.size());
    for (std::size_t s = 0; s < maps.size(); ++s) {
        scores[s].resize(maps[s].size());
        for (std::size_t t = 0; t < maps[s].size(); ++t) {
            for (const auto& layer : maps[s][t]) scores[s][t].push_back(redundancy_score(layer, opts));
        }
    }
    return trace_from_scores(scores, meta);
}

void write_trace_csv(std::ostream& os, const RedundancyTrace& trace) {
    os << "layer,step,score,samples,heads\n";
    for (std::size_t l = 0; l < trace.layers(); ++l) {
        for (std::size_t t = 0; t < trace.scores[l].size(); ++t) {
            os << l << ',' << t << ',' << io::format_double(trace.scores[l][t]) << ',' << trace.samples << ','
               << trace.heads << '\n';
        }
    }
}

}  // namespace mtat
