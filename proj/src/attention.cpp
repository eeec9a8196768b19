// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtat/attention.hpp"

#include <cmath>
#include <cstdlib>

#include "mtat/errors.hpp"
#include "mtat/ops.hpp"

namespace mtat {

AttentionConfig AttentionConfig::grid(std::size_t height, std::size_t width, std::size_t hidden, std::size_t heads) {
    AttentionConfig cfg{height * width, hidden, heads, height, width};
    cfg.validate();
    return cfg;
}

void AttentionConfig::validate() const {
    if (tokens == 0 || hidden == 0 || heads == 0) throw ConfigError("attention config: N, C and M must be positive");
    if (hidden % heads != 0) {
        throw ConfigError("attention config: heads " + std::to_string(heads) + " do not divide hidden " +
                          std::to_string(hidden));
    }
    if (height * width != tokens) {
        throw ConfigError("attention config: grid " + std::to_string(height) + "x" + std::to_string(width) +
                          " does not hold " + std::to_string(tokens) + " tokens");
    }
}

void MediatorConfig::validate(const AttentionConfig& cfg) const {
    if (h < 1 || w < 1 || h > cfg.height || w > cfg.width) {
        throw DimensionError("mediator grid " + std::to_string(h) + "x" + std::to_string(w) + " does not fit token grid " +
                             std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    }
}

MediatorConfig mediator_grid_for(std::size_t n, const AttentionConfig& cfg) {
    MediatorConfig best{0, 0};
    for (std::size_t h = 1; h <= cfg.height && h <= n; ++h) {
        if (n % h != 0) continue;
        const std::size_t w = n / h;
        if (w > cfg.width) continue;
        const auto gap = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
        if (best.h == 0 || gap(h, w) < gap(best.h, best.w) || (gap(h, w) == gap(best.h, best.w) && h < best.h)) {
            best = {h, w};
        }
    }
    if (best.h == 0) {
        throw ConfigError("no h x w grid with h*w = " + std::to_string(n) + " fits inside " +
                          std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    }
    return best;
}

MultiHeadParams MultiHeadParams::identity(std::size_t hidden) {
    return {Tensor::identity(hidden), Tensor::identity(hidden), Tensor::identity(hidden), Tensor::identity(hidden)};
}

MultiHeadParams MultiHeadParams::random(std::size_t hidden, std::mt19937_64& rng, double stddev) {
    MultiHeadParams p;
    p.wq = Tensor::randn({hidden, hidden}, rng, stddev);
    p.wk = Tensor::randn({hidden, hidden}, rng, stddev);
    p.wv = Tensor::randn({hidden, hidden}, rng, stddev);
    p.wo = Tensor::randn({hidden, hidden}, rng, stddev);
    return p;
}

void MultiHeadParams::validate(std::size_t hidden) const {
    for (const Var* w : {&wq, &wk, &wv, &wo}) {
        if (w->shape() != Shape{hidden, hidden}) {
            throw DimensionError("projection " + shape_str(w->shape()) + " is not " + std::to_string(hidden) + "x" +
                                 std::to_string(hidden));
        }
    }
}

FlopsReport FlopsReport::from_counter(const OpCounter& c) {
    FlopsReport r;
    r.qkv_proj = c.get(MacBucket::QkvProj);
    r.scores_qk = c.get(MacBucket::ScoresQK);
    r.aggregate_v = c.get(MacBucket::AggregateV);
    r.scores_qt = c.get(MacBucket::ScoresQT);
    r.aggregate_qt = c.get(MacBucket::AggregateQT);
    r.pooling = c.get(MacBucket::Pooling);
    r.dwconv = c.get(MacBucket::DwConv);
    r.out_proj = c.get(MacBucket::OutProj);
    return r;
}

FlopsReport& FlopsReport::operator+=(const FlopsReport& o) {
    qkv_proj += o.qkv_proj;
    scores_qk += o.scores_qk;
    aggregate_v += o.aggregate_v;
    scores_qt += o.scores_qt;
    aggregate_qt += o.aggregate_qt;
    pooling += o.pooling;
    dwconv += o.dwconv;
    out_proj += o.out_proj;
    return *this;
}

FlopsReport operator+(FlopsReport a, const FlopsReport& b) {
    a += b;
    return a;
}

nlohmann::json to_json(const FlopsReport& r) {
    return nlohmann::json{
        {"qkv_proj", r.qkv_proj},
        {"interaction", r.interaction()},
        {"pooling", r.pooling},
        {"dwconv", r.dwconv},
        {"out_proj", r.out_proj},
        {"total_macs", r.total_macs()},
        {"total_flops", r.total_flops()},
        {"interaction_detail",
         {{"scores_qk", r.scores_qk},
          {"aggregate_v", r.aggregate_v},
          {"scores_qt", r.scores_qt},
          {"aggregate_qt", r.aggregate_qt}}},
    };
}

Qkv project_qkv(const Var& z, const MultiHeadParams& params, OpCounter* counter) {
    if (z.value().rank() != 2) throw DimensionError("project_qkv: z must be N×C, got " + shape_str(z.shape()));
    params.validate(z.value().cols());
    const MacTag mac = tag(counter, MacBucket::QkvProj);
    return {matmul(z, params.wq, mac), matmul(z, params.wk, mac), matmul(z, params.wv, mac)};
}

namespace {

void require_head_dims(const Var& q, const Var& k, const Var& v) {
    const Tensor& qt = q.value();
    const Tensor& kt = k.value();
    const Tensor& vt = v.value();
    if (qt.rank() != 2 || kt.rank() != 2 || vt.rank() != 2 || qt.cols() == 0 || qt.cols() != kt.cols() ||
        kt.rows() != vt.rows()) {
        throw DimensionError("attention head: incompatible q " + shape_str(qt.shape()) + ", k " +
                             shape_str(kt.shape()) + ", v " + shape_str(vt.shape()));
    }
}

}  // namespace

HeadResult vanilla_attention_head(const Var& q, const Var& k, const Var& v, OpCounter* counter) {
    require_head_dims(q, k, v);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
    Var attn = softmax_rows(scale(matmul_nt(q, k, tag(counter, MacBucket::ScoresQK)), inv_sqrt_d));
    Var out = matmul(attn, v, tag(counter, MacBucket::AggregateV));
    return {out, attn};
}

MediatorHeadResult mediator_attention_head(const Var& q, const Var& k, const Var& v, const Var& t,
                                           OpCounter* counter) {
    require_head_dims(q, k, v);
    if (t.value().rank() != 2 || t.value().cols() != q.value().cols()) {
        throw DimensionError("mediator head: mediators " + shape_str(t.shape()) + " do not match head width of q " +
                             shape_str(q.shape()));
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
    // Step 1: mediators gather from keys/values, n×d.
    Var attn_tk = softmax_rows(scale(matmul_nt(t, k, tag(counter, MacBucket::ScoresQK)), inv_sqrt_d));
    Var v_med = matmul(attn_tk, v, tag(counter, MacBucket::AggregateV));
    // Step 2: queries read from mediators, N×d.
    Var attn_qt = softmax_rows(scale(matmul_nt(q, t, tag(counter, MacBucket::ScoresQT)), inv_sqrt_d));
    Var out = matmul(attn_qt, v_med, tag(counter, MacBucket::AggregateQT));
    return {out, attn_qt, attn_tk};
}

LayerResult multi_head_attention(const Var& z, const MultiHeadParams& params, const AttentionConfig& cfg,
                                 OpCounter* counter, bool keep_maps) {
    cfg.validate();
    if (z.shape() != Shape{cfg.tokens, cfg.hidden}) {
        throw DimensionError("multi_head_attention: z " + shape_str(z.shape()) + " does not match config N=" +
                             std::to_string(cfg.tokens) + ", C=" + std::to_string(cfg.hidden));
    }
    const Qkv qkv = project_qkv(z, params, counter);
    const std::size_t d = cfg.head_dim();
    std::vector<Var> heads;
    FullMaps maps;
    for (std::size_t m = 0; m < cfg.heads; ++m) {
        auto r = vanilla_attention_head(slice_cols(qkv.q, m * d, d), slice_cols(qkv.k, m * d, d),
                                        slice_cols(qkv.v, m * d, d), counter);
        heads.push_back(r.out);
        if (keep_maps) maps.heads.push_back(r.attn.value());
    }
    Var out = matmul(concat_cols(heads), params.wo, tag(counter, MacBucket::OutProj));
    return {out, std::move(maps)};
}

Var make_mediators(const Var& q, const AttentionConfig& cfg, const MediatorConfig& mcfg, OpCounter* counter) {
    cfg.validate();
    mcfg.validate(cfg);
    if (q.value().rank() != 2 || q.value().rows() != cfg.height * cfg.width) {
        throw DimensionError("make_mediators: q " + shape_str(q.shape()) + " does not match grid " +
                             std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    }
    const std::size_t c = q.value().cols();
    Var grid = reshape(q, {cfg.height, cfg.width, c});
    Var pooled = adaptive_avg_pool2d(grid, mcfg.h, mcfg.w, tag(counter, MacBucket::Pooling));
    return reshape(pooled, {mcfg.count(), c});
}

Var depthwise_branch(const Var& v, const Var& dw_kernels, const AttentionConfig& cfg, OpCounter* counter) {
    const std::size_t c = v.value().cols();
    Var grid = reshape(v, {cfg.height, cfg.width, c});
    Var conv = depthwise_conv3x3(grid, dw_kernels, tag(counter, MacBucket::DwConv));
    return reshape(conv, {cfg.tokens, c});
}

LayerResult mediator_attention(const Var& z, const MultiHeadParams& params, const Var& dw_kernels,
                               const AttentionConfig& cfg, const MediatorConfig& mcfg, OpCounter* counter,
                               bool keep_maps) {
    cfg.validate();
    mcfg.validate(cfg);
    if (z.shape() != Shape{cfg.tokens, cfg.hidden}) {
        throw DimensionError("mediator_attention: z " + shape_str(z.shape()) + " does not match config N=" +
                             std::to_string(cfg.tokens) + ", C=" + std::to_string(cfg.hidden));
    }
    const Qkv qkv = project_qkv(z, params, counter);
    const Var t = make_mediators(qkv.q, cfg, mcfg, counter);
    const std::size_t d = cfg.head_dim();
    std::vector<Var> heads;
    MediatedMaps maps;
    for (std::size_t m = 0; m < cfg.heads; ++m) {
        auto r = mediator_attention_head(slice_cols(qkv.q, m * d, d), slice_cols(qkv.k, m * d, d),
                                         slice_cols(qkv.v, m * d, d), slice_cols(t, m * d, d), counter);
        heads.push_back(r.out);
        if (keep_maps) {
            maps.qt.push_back(r.attn_qt.value());
            maps.tk.push_back(r.attn_tk.value());
        }
    }
    Var mixed = concat_cols(heads) + depthwise_branch(qkv.v, dw_kernels, cfg, counter);
    Var out = matmul(mixed, params.wo, tag(counter, MacBucket::OutProj));
    return {out, std::move(maps)};
}

std::vector<Tensor> composed_attention_map(const AttentionMaps& maps) {
    const auto* med = std::get_if<MediatedMaps>(&maps);
    if (!med) throw UsageError("composed_attention_map: maps are already full N×N");
    if (med->qt.size() != med->tk.size()) throw DimensionError("composed_attention_map: head count mismatch");
    std::vector<Tensor> out;
    out.reserve(med->qt.size());
    for (std::size_t m = 0; m < med->qt.size(); ++m) out.push_back(ops::matmul(med->qt[m], med->tk[m]));
    return out;
}

std::vector<Tensor> full_attention_maps(const AttentionMaps& maps) {
    if (const auto* full = std::get_if<FullMaps>(&maps)) return full->heads;
    return composed_attention_map(maps);
}

namespace {

FlopsReport projections(const AttentionConfig& cfg) {
    FlopsReport r;
    const std::uint64_t n = cfg.tokens, c = cfg.hidden;
    r.qkv_proj = 3 * n * c * c;
    r.out_proj = n * c * c;
    return r;
}

}  // namespace

FlopsReport attention_flops(const AttentionConfig& cfg) {
    cfg.validate();
    FlopsReport r = projections(cfg);
    const std::uint64_t n = cfg.tokens, c = cfg.hidden;
    // Summed over heads: M·N²·d = N²·C per matmul.
    r.scores_qk = n * n * c;
    r.aggregate_v = n * n * c;
    return r;
}

FlopsReport mediator_flops(const AttentionConfig& cfg, const MediatorConfig& mcfg) {
    cfg.validate();
    mcfg.validate(cfg);
    FlopsReport r = projections(cfg);
    const std::uint64_t n_tok = cfg.tokens, c = cfg.hidden, n_med = mcfg.count();
    r.scores_qk = n_med * n_tok * c;
    r.aggregate_v = n_med * n_tok * c;
    r.scores_qt = n_tok * n_med * c;
    r.aggregate_qt = n_tok * n_med * c;
    r.pooling = ops::adaptive_pool_macs(cfg.height, cfg.width, mcfg.h, mcfg.w, cfg.hidden);
    r.dwconv = 9 * n_tok * c;
    return r;
}

std::string_view bucket_name(MacBucket b) {
    switch (b) {
        case MacBucket::QkvProj: return "qkv_proj";
        case MacBucket::ScoresQK: return "scores_qk";
        case MacBucket::AggregateV: return "aggregate_v";
        case MacBucket::ScoresQT: return "scores_qt";
        case MacBucket::AggregateQT: return "aggregate_qt";
        case MacBucket::Pooling: return "pooling";
        case MacBucket::DwConv: return "dwconv";
        case MacBucket::OutProj: return "out_proj";
        case MacBucket::Count_: break;
    }
    return "unknown";
}

}  // namespace mtat
