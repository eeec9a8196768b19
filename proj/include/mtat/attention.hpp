// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtat/autograd.hpp"
#include "mtat/counter.hpp"

namespace mtat {

/// Token layout of one attention layer: N = H·W tokens of width C split into M heads.
struct AttentionConfig {
    std::size_t tokens = 0;  // N
    std::size_t hidden = 0;  // C
    std::size_t heads = 1;   // M
    std::size_t height = 0;  // H
    std::size_t width = 0;   // W

    static AttentionConfig grid(std::size_t height, std::size_t width, std::size_t hidden, std::size_t heads);
    std::size_t head_dim() const { return hidden / heads; }
    void validate() const;
};

/// Mediator pooling grid; n = h·w mediator tokens.
struct MediatorConfig {
    std::size_t h = 1;
    std::size_t w = 1;

    std::size_t count() const { return h * w; }
    void validate(const AttentionConfig& cfg) const;
};

/// Most square h×w grid with h·w = n that fits inside H×W (h ≤ w on ties).
MediatorConfig mediator_grid_for(std::size_t n, const AttentionConfig& cfg);

/// Bias-free projections, each C×C.
struct MultiHeadParams {
    Var wq, wk, wv, wo;

    static MultiHeadParams identity(std::size_t hidden);
    static MultiHeadParams random(std::size_t hidden, std::mt19937_64& rng, double stddev);
    void validate(std::size_t hidden) const;
};

struct FullMaps {
    std::vector<Tensor> heads;  // N×N each
};

struct MediatedMaps {
    std::vector<Tensor> qt;  // N×n each
    std::vector<Tensor> tk;  // n×N each
};

/// Row-stochastic attention maps captured from one layer.
using AttentionMaps = std::variant<FullMaps, MediatedMaps>;

/// Itemized multiply-accumulate counts of one (or several summed) attention layers.
struct FlopsReport {
    std::uint64_t qkv_proj = 0;
    std::uint64_t scores_qk = 0;     // q·kᵀ or t·kᵀ
    std::uint64_t aggregate_v = 0;   // A·v or A_tk·v
    std::uint64_t scores_qt = 0;     // q·tᵀ
    std::uint64_t aggregate_qt = 0;  // A_qt·v_med
    std::uint64_t pooling = 0;
    std::uint64_t dwconv = 0;
    std::uint64_t out_proj = 0;

    static FlopsReport from_counter(const OpCounter& counter);

    std::uint64_t interaction() const { return scores_qk + aggregate_v + scores_qt + aggregate_qt; }
    std::uint64_t total_macs() const {
        return qkv_proj + interaction() + pooling + dwconv + out_proj;
    }
    std::uint64_t total_flops() const { return 2 * total_macs(); }

    FlopsReport& operator+=(const FlopsReport& o);
    bool operator==(const FlopsReport&) const = default;
};

FlopsReport operator+(FlopsReport a, const FlopsReport& b);

/// Fixed-key JSON: qkv_proj, interaction, pooling, dwconv, out_proj, total_macs, total_flops
/// (plus an `interaction_detail` object with the four interaction matmuls).
nlohmann::json to_json(const FlopsReport& r);

struct Qkv {
    Var q, k, v;
};

/// q = zW_q, k = zW_k, v = zW_v.
Qkv project_qkv(const Var& z, const MultiHeadParams& params, OpCounter* counter = nullptr);

struct HeadResult {
    Var out;   // N×d
    Var attn;  // N×N
};

/// A = softmax(q·kᵀ/√d), h = A·v.
HeadResult vanilla_attention_head(const Var& q, const Var& k, const Var& v, OpCounter* counter = nullptr);

struct MediatorHeadResult {
    Var out;      // N×d
    Var attn_qt;  // N×n
    Var attn_tk;  // n×N
};

/// v_med = softmax(t·kᵀ/√d)·v, then h = softmax(q·tᵀ/√d)·v_med. Never forms an N×N matrix.
MediatorHeadResult mediator_attention_head(const Var& q, const Var& k, const Var& v, const Var& t,
                                           OpCounter* counter = nullptr);

struct LayerResult {
    Var out;  // N×C
    AttentionMaps maps;
};

LayerResult multi_head_attention(const Var& z, const MultiHeadParams& params, const AttentionConfig& cfg,
                                 OpCounter* counter = nullptr, bool keep_maps = true);

/// Pools full-width queries (raster-ordered H×W grid) down to h×w mediator tokens.
Var make_mediators(const Var& q, const AttentionConfig& cfg, const MediatorConfig& mcfg,
                   OpCounter* counter = nullptr);

/// Depthwise 3×3 convolution of v laid out on the token grid; returns N×C.
Var depthwise_branch(const Var& v, const Var& dw_kernels, const AttentionConfig& cfg, OpCounter* counter = nullptr);

/// Mediator attention layer: concat(heads) + depthwise_branch(v), then W_O.
LayerResult mediator_attention(const Var& z, const MultiHeadParams& params, const Var& dw_kernels,
                               const AttentionConfig& cfg, const MediatorConfig& mcfg,
                               OpCounter* counter = nullptr, bool keep_maps = true);

/// A_qt·A_tk per head. Throws UsageError for full maps.
std::vector<Tensor> composed_attention_map(const AttentionMaps& maps);

/// Per-head N×N maps regardless of variant (composing mediated maps).
std::vector<Tensor> full_attention_maps(const AttentionMaps& maps);

FlopsReport attention_flops(const AttentionConfig& cfg);
FlopsReport mediator_flops(const AttentionConfig& cfg, const MediatorConfig& mcfg);

}  // namespace mtat
