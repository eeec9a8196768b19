// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "mtat/diffusion.hpp"
#include "mtat/errors.hpp"
#include "mtat/util.hpp"

namespace mtat::diffusion {

std::string to_string(AttentionKind k) { return k == AttentionKind::Vanilla ? "vanilla" : "mediator"; }

AttentionKind parse_attention_kind(const std::string& s) {
    if (s == "vanilla") return AttentionKind::Vanilla;
    if (s == "mediator") return AttentionKind::Mediator;
    throw ConfigError("unknown attention kind \"" + s + "\" (expected vanilla or mediator)");
}

AttentionKind ToyModelConfig::kind(std::size_t layer) const {
    return kinds.empty() ? AttentionKind::Mediator : kinds.at(layer);
}

AttentionConfig ToyModelConfig::attention_config() const {
    return AttentionConfig{tokens(), hidden, heads, height, width};
}

void ToyModelConfig::validate() const {
    if (layers < 1) throw ConfigError("model: at least one layer is required");
    if (channels < 1 || time_dim < 1 || classes < 1 || mlp_ratio < 1) {
        throw ConfigError("model: channels, time_dim, classes and mlp_ratio must be positive");
    }
    if (!kinds.empty() && kinds.size() != layers) {
        throw ConfigError("model: kinds has " + std::to_string(kinds.size()) + " entries for " +
                          std::to_string(layers) + " layers");
    }
    attention_config().validate();
    validate_mediators(mediators);
}

void ToyModelConfig::validate_mediators(std::size_t n) const {
    if (n < 1 || n > tokens()) {
        throw ConfigError("mediator count " + std::to_string(n) + " outside [1, " + std::to_string(tokens()) + "]");
    }
    for (std::size_t l = 0; l < layers; ++l) {
        if (kind(l) == AttentionKind::Mediator) {
            mediator_grid_for(n, attention_config());
            return;
        }
    }
}

nlohmann::json to_json(const ToyModelConfig& cfg) {
    nlohmann::json kinds = nlohmann::json::array();
    for (std::size_t l = 0; l < cfg.layers; ++l) kinds.push_back(to_string(cfg.kind(l)));
    return {{"layers", cfg.layers},       {"hidden", cfg.hidden},       {"heads", cfg.heads},
            {"height", cfg.height},       {"width", cfg.width},         {"channels", cfg.channels},
            {"time_dim", cfg.time_dim},   {"classes", cfg.classes},     {"mlp_ratio", cfg.mlp_ratio},
            {"kinds", kinds},             {"mediators", cfg.mediators}, {"zero_init_head", cfg.zero_init_head}};
}

ToyModelConfig model_config_from_json(const nlohmann::json& j) {
    ToyModelConfig cfg;
    if (!j.is_object()) throw ConfigError("model: expected a JSON object");
    static const char* const known[] = {"layers",    "hidden",  "heads",     "height", "width",     "channels",
                                        "time_dim",  "classes", "mlp_ratio", "kinds",  "mediators", "zero_init_head"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
            throw ConfigError("model: unknown field \"" + key + "\"");
        }
    }
    auto read = [&j](const char* key, auto& field) {
        if (!j.contains(key)) return;
        if constexpr (std::is_same_v<std::decay_t<decltype(field)>, std::size_t>) {
            if (!j.at(key).is_number_unsigned()) {
                throw ConfigError(std::string("model.") + key + ": expected a non-negative integer");
            }
        }
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("model.") + key + ": " + e.what());
        }
    };
    read("layers", cfg.layers);
    read("hidden", cfg.hidden);
    read("heads", cfg.heads);
    read("height", cfg.height);
    read("width", cfg.width);
    read("channels", cfg.channels);
    read("time_dim", cfg.time_dim);
    read("classes", cfg.classes);
    read("mlp_ratio", cfg.mlp_ratio);
    read("mediators", cfg.mediators);
    read("zero_init_head", cfg.zero_init_head);
    if (j.contains("kinds")) {
        std::vector<std::string> names;
        read("kinds", names);
        for (const auto& n : names) cfg.kinds.push_back(parse_attention_kind(n));
    }
    cfg.validate();
    return cfg;
}

namespace {

std::string block(std::size_t l, const char* leaf) { return "blocks." + std::to_string(l) + "." + leaf; }

// 1-D sin/cos features of `pos` written into dims [offset, offset + width).
void write_sincos(Tensor& out, std::size_t row, std::size_t offset, std::size_t width, double pos) {
    for (std::size_t j = 0; j < width; ++j) {
        const double k = static_cast<double>(j / 2);
        const double freq = std::pow(10000.0, -2.0 * k / static_cast<double>(width));
        out(row, offset + j) = (j % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
}

Tensor grid_positions(std::size_t height, std::size_t width, std::size_t hidden) {
    Tensor pos({height * width, hidden});
    const std::size_t row_dims = hidden / 2;
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            write_sincos(pos, y * width + x, 0, row_dims, static_cast<double>(y));
            write_sincos(pos, y * width + x, row_dims, hidden - row_dims, static_cast<double>(x));
        }
    }
    return pos;
}

Tensor time_features(double t, std::size_t dim) {
    Tensor f({1, dim});
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        const double arg = 1000.0 * t * freq;
        f(0, i) = std::cos(arg);
        f(0, half + i) = std::sin(arg);
    }
    return f;
}

io::NamedTensors init_params(const ToyModelConfig& c, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "init"));
    const std::size_t C = c.hidden, hid = c.hidden * c.mlp_ratio;
    auto fan_in = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
    io::NamedTensors p;
    p["embed.w"] = Tensor::randn({c.channels, C}, rng, fan_in(c.channels));
    p["embed.b"] = Tensor({C});
    p["time.w"] = Tensor::randn({c.time_dim, C}, rng, fan_in(c.time_dim));
    p["time.b"] = Tensor({C});
    p["class.table"] = Tensor::randn({c.classes, C}, rng, 0.5);
    for (std::size_t l = 0; l < c.layers; ++l) {
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
            p[block(l, w)] = Tensor::randn({C, C}, rng, fan_in(C));
        }
        if (c.kind(l) == AttentionKind::Mediator) p[block(l, "attn.dw")] = Tensor::randn({3, 3, C}, rng, 0.1);
        p[block(l, "mlp.w1")] = Tensor::randn({C, hid}, rng, fan_in(C));
        p[block(l, "mlp.b1")] = Tensor({hid});
        p[block(l, "mlp.w2")] = Tensor::randn({hid, C}, rng, fan_in(hid));
        p[block(l, "mlp.b2")] = Tensor({C});
    }
    p["head.w"] = c.zero_init_head ? Tensor({C, c.channels}) : Tensor::randn({C, c.channels}, rng, 0.1 * fan_in(C));
    p["head.b"] = Tensor({c.channels});
    return p;
}

}  // namespace

ToyModel::ToyModel(ToyModelConfig cfg, std::uint64_t init_seed)
    : ToyModel(cfg, init_params((cfg.validate(), cfg), init_seed)) {}

ToyModel::ToyModel(ToyModelConfig cfg, const io::NamedTensors& params) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const io::NamedTensors reference = init_params(cfg_, 0);
    for (const auto& [name, ref] : reference) {
        auto it = params.find(name);
        if (it == params.end()) throw ConfigError("checkpoint is missing parameter " + name);
        if (it->second.shape() != ref.shape()) {
            throw ConfigError("checkpoint parameter " + name + " has shape " + shape_str(it->second.shape()) +
                              ", model expects " + shape_str(ref.shape()));
        }
        params_.emplace(name, Var(it->second));
    }
    if (params.size() != reference.size()) throw ConfigError("checkpoint has parameters this model does not use");
    positions_ = grid_positions(cfg_.height, cfg_.width, cfg_.hidden);
}

void ToyModel::set_param(const std::string& name, Tensor value) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown parameter " + name);
    if (value.shape() != it->second.shape()) throw DimensionError("set_param: shape mismatch for " + name);
    it->second = Var(std::move(value));
}

io::NamedTensors ToyModel::named_tensors() const {
    io::NamedTensors out;
    for (const auto& [name, v] : params_) out.emplace(name, v.value());
    return out;
}

std::uint64_t ToyModel::param_checksum() const {
    std::uint64_t h = 0;
    for (const auto& [name, v] : params_) h = splitmix64(h ^ checksum(v.value()));
    return h;
}

std::size_t ToyModel::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : params_) n += v.value().size();
    return n;
}

Var ToyModel::forward(const ParamMap& params, const Var& x_t, double t, std::size_t label, std::size_t mediators,
                      OpCounter* counter, std::vector<AttentionMaps>* maps) const {
    const Shape latent{cfg_.tokens(), cfg_.channels};
    if (x_t.shape() != latent) {
        throw DimensionError("model_forward: input " + shape_str(x_t.shape()) + ", expected " + shape_str(latent));
    }
    if (label >= cfg_.classes) throw ConfigError("model_forward: class label " + std::to_string(label) + " out of range");
    cfg_.validate_mediators(mediators);
    auto P = [&params](const std::string& name) -> const Var& { return params.at(name); };

    const AttentionConfig acfg = cfg_.attention_config();
    Var h = add_row(matmul(x_t, P("embed.w")), P("embed.b")) + Var(positions_);
    Var temb = add_row(matmul(Var(time_features(t, cfg_.time_dim)), P("time.w")), P("time.b"));
    h = add_row(h, temb + take_row(P("class.table"), label));

    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const MultiHeadParams mh{P(block(l, "attn.wq")), P(block(l, "attn.wk")), P(block(l, "attn.wv")),
                                 P(block(l, "attn.wo"))};
        Var normed = layer_norm_rows(h);
        LayerResult attn = cfg_.kind(l) == AttentionKind::Vanilla
                               ? multi_head_attention(normed, mh, acfg, counter, maps != nullptr)
                               : mediator_attention(normed, mh, P(block(l, "attn.dw")), acfg,
                                                    mediator_grid_for(mediators, acfg), counter, maps != nullptr);
        if (maps) maps->push_back(std::move(attn.maps));
        h = h + attn.out;
        Var hidden = silu(add_row(matmul(layer_norm_rows(h), P(block(l, "mlp.w1"))), P(block(l, "mlp.b1"))));
        h = h + add_row(matmul(hidden, P(block(l, "mlp.w2"))), P(block(l, "mlp.b2")));
    }
    return add_row(matmul(layer_norm_rows(h), P("head.w")), P("head.b"));
}

Tensor ToyModel::predict(const Tensor& x_t, double t, std::size_t label, std::size_t mediators, OpCounter* counter,
                         std::vector<AttentionMaps>* maps) const {
    return forward(params_, Var(x_t), t, label, mediators, counter, maps).value();
}

FlopsReport ToyModel::step_flops(std::size_t mediators) const {
    cfg_.validate_mediators(mediators);
    const AttentionConfig acfg = cfg_.attention_config();
    FlopsReport total;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        total += cfg_.kind(l) == AttentionKind::Vanilla ? attention_flops(acfg)
                                                        : mediator_flops(acfg, mediator_grid_for(mediators, acfg));
    }
    return total;
}

Shape ConditionedModel::latent_shape() const {
    return {model_.config().tokens(), model_.config().channels};
}

Tensor ConditionedModel::predict(const Tensor& x, double t, std::size_t mediators, OpCounter* counter) const {
    if (!sink_) return model_.predict(x, t, label_, mediators, counter);
    std::vector<AttentionMaps> maps;
    Tensor v = model_.predict(x, t, label_, mediators, counter, &maps);
    sink_->push_back(std::move(maps));
    return v;
}

MultiCheckpointModel::MultiCheckpointModel(std::map<std::size_t, const ToyModel*> by_count, std::size_t label)
    : models_(std::move(by_count)), label_(label) {
    if (models_.empty()) throw ConfigError("multi-checkpoint model: no checkpoints given");
    const Shape shape = ConditionedModel(*models_.begin()->second, label).latent_shape();
    for (const auto& [n, m] : models_) {
        if (ConditionedModel(*m, label).latent_shape() != shape) {
            throw ConfigError("multi-checkpoint model: checkpoint for n=" + std::to_string(n) +
                              " has a different latent shape");
        }
        if (label >= m->config().classes) throw ConfigError("multi-checkpoint model: label out of range");
        m->config().validate_mediators(n);
    }
}

const ToyModel& MultiCheckpointModel::pick(std::size_t mediators) const {
    auto it = models_.find(mediators);
    if (it == models_.end()) {
        throw ConfigError("multi-checkpoint model: no checkpoint for mediator count " + std::to_string(mediators));
    }
    return *it->second;
}

Shape MultiCheckpointModel::latent_shape() const {
    return ConditionedModel(*models_.begin()->second, label_).latent_shape();
}

Tensor MultiCheckpointModel::predict(const Tensor& x, double t, std::size_t mediators, OpCounter* counter) const {
    return pick(mediators).predict(x, t, label_, mediators, counter);
}

FlopsReport MultiCheckpointModel::step_flops(std::size_t mediators) const { return pick(mediators).step_flops(mediators); }

// --- training --------------------------------------------------------------

std::vector<TrainingDraw> draw_training_noise(const std::vector<Sample>& batch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<TrainingDraw> draws;
    draws.reserve(batch.size());
    for (const auto& s : batch) {
        const double t = unit(rng);
        draws.push_back({t, Tensor::randn(s.x.shape(), rng)});
    }
    return draws;
}

namespace {

Var batch_loss(const ToyModel& model, const ParamMap& params, const std::vector<Sample>& batch,
               const std::vector<TrainingDraw>& draws, std::size_t mediators) {
    if (batch.empty()) throw UsageError("flow-matching loss: empty batch");
    if (draws.size() != batch.size()) throw UsageError("flow-matching loss: one draw per sample required");
    Var total;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Interpolated it = interpolate(batch[b].x, draws[b].eps, draws[b].t);
        Var pred = model.forward(params, Var(it.x_t), draws[b].t, batch[b].label, mediators);
        Var l = mse(pred, Var(it.v_target));
        total = b == 0 ? l : total + l;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

}  // namespace

double flow_matching_loss(const ToyModel& model, const std::vector<Sample>& batch,
                          const std::vector<TrainingDraw>& draws, std::size_t mediators) {
    return batch_loss(model, model.params(), batch, draws, mediators).value()[0];
}

LossAndGrads flow_matching_loss_and_grads(const ToyModel& model, const std::vector<Sample>& batch,
                                          const std::vector<TrainingDraw>& draws, std::size_t mediators) {
    Tape tape;
    ParamMap leaves;
    for (const auto& [name, v] : model.params()) leaves.emplace(name, tape.watch(v, name));
    Var loss = batch_loss(model, leaves, batch, draws, mediators);
    Gradients g = tape.backward(loss);
    LossAndGrads out;
    out.loss = loss.value()[0];
    for (const auto& [name, v] : leaves) out.grads.emplace(name, g.of(v));
    return out;
}

Trainer::Trainer(ToyModel& model, SgdConfig cfg, std::uint64_t seed, std::vector<std::size_t> mediator_choices)
    : model_(model), cfg_(cfg), seed_(seed), mediator_choices_(std::move(mediator_choices)) {
    if (cfg_.lr < 0.0 || cfg_.momentum < 0.0 || cfg_.momentum >= 1.0) {
        throw ConfigError("sgd: lr must be >= 0 and momentum in [0, 1)");
    }
    if (mediator_choices_.empty()) mediator_choices_.push_back(model.config().mediators);
    for (std::size_t n : mediator_choices_) model.config().validate_mediators(n);
}

double Trainer::train_step(const std::vector<Sample>& batch) {
    return train_step(batch, draw_training_noise(batch, derive_seed(seed_, "train", step_)));
}

double Trainer::train_step(const std::vector<Sample>& batch, const std::vector<TrainingDraw>& draws) {
    const std::uint64_t batch_seed = derive_seed(seed_, "train", step_);
    const std::size_t mediators = mediator_choices_[batch_seed % mediator_choices_.size()];
    LossAndGrads lg;
    try {
        lg = flow_matching_loss_and_grads(model_, batch, draws, mediators);
    } catch (const NumericError& e) {
        throw NumericError("train step " + std::to_string(step_) + " (batch seed " + std::to_string(batch_seed) +
                           "): " + e.what());
    }
    if (!std::isfinite(lg.loss)) {
        throw NumericError("train step " + std::to_string(step_) + " (batch seed " + std::to_string(batch_seed) +
                           "): non-finite loss");
    }
    for (const auto& [name, grad] : lg.grads) {
        Tensor param = model_.params().at(name).value();
        Tensor& vel = velocity_.try_emplace(name, Tensor(grad.shape())).first->second;
        for (std::size_t i = 0; i < param.size(); ++i) {
            vel[i] = cfg_.momentum * vel[i] + grad[i];
            param[i] -= cfg_.lr * vel[i];
        }
        model_.set_param(name, std::move(param));
    }
    ++step_;
    return lg.loss;
}

}  // namespace mtat::diffusion
