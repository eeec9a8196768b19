// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtat/attention.hpp"
#include "mtat/autograd.hpp"
#include "mtat/io.hpp"
#include "mtat/redundancy.hpp"
#include "mtat/scheduler.hpp"

namespace mtat::diffusion {

// --- data ------------------------------------------------------------------

struct DatasetSpec {
    std::size_t size = 256;
    std::size_t classes = 4;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t channels = 1;
    std::uint64_t seed = 0;
};

struct Sample {
    Tensor x;  // N×channels, raster token order
    std::size_t label = 0;
};

struct Dataset {
    std::vector<Sample> samples;
    double mean = 0.0;  // statistics removed during standardization
    double stddev = 1.0;
};

/// Procedural class-conditional patterns (oriented gratings plus a Gaussian
/// blob whose position depends on the class), standardized to zero mean and
/// unit variance over the whole dataset. Labels cycle 0, 1, …, classes−1.
Dataset synth_dataset(const DatasetSpec& spec);

// --- interpolant -----------------------------------------------------------

struct Interpolated {
    Tensor x_t;
    Tensor v_target;
};

/// Linear interpolant x_t = (1−t)·x + t·eps with velocity target eps − x.
Interpolated interpolate(const Tensor& x, const Tensor& eps, double t);

// --- model -----------------------------------------------------------------

enum class AttentionKind { Vanilla, Mediator };

std::string to_string(AttentionKind k);
AttentionKind parse_attention_kind(const std::string& s);

struct ToyModelConfig {
    std::size_t layers = 2;
    std::size_t hidden = 16;
    std::size_t heads = 2;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t channels = 1;
    std::size_t time_dim = 16;
    std::size_t classes = 4;
    std::size_t mlp_ratio = 2;
    /// One entry per layer; empty means every layer uses mediator attention.
    std::vector<AttentionKind> kinds;
    /// Mediator count used when the caller does not choose one.
    std::size_t mediators = 4;
    bool zero_init_head = false;

    std::size_t tokens() const { return height * width; }
    AttentionKind kind(std::size_t layer) const;
    AttentionConfig attention_config() const;
    void validate() const;
    /// Throws ConfigError unless `n` maps onto a pooling grid for every mediator layer.
    void validate_mediators(std::size_t n) const;
};

nlohmann::json to_json(const ToyModelConfig& cfg);
ToyModelConfig model_config_from_json(const nlohmann::json& j);

using ParamMap = std::map<std::string, Var>;

/// Desk-scale flow-matching transformer: one token per grid cell, fixed 2-D
/// sin-cos positions, additive timestep + class conditioning, pre-norm blocks
/// (attention + SiLU MLP), linear velocity head.
///
/// The mediator count is a runtime argument; it only changes the pooling
/// target, so one weight set serves every count.
class ToyModel {
public:
    ToyModel(ToyModelConfig cfg, std::uint64_t init_seed);
    ToyModel(ToyModelConfig cfg, const io::NamedTensors& params);

    const ToyModelConfig& config() const { return cfg_; }
    const ParamMap& params() const { return params_; }
    void set_param(const std::string& name, Tensor value);
    io::NamedTensors named_tensors() const;
    std::uint64_t param_checksum() const;
    std::size_t param_count() const;

    /// Differentiable forward. `params` may be recorded leaves (training) or
    /// the model's own plain values. Per-layer maps are appended to `maps` if given.
    Var forward(const ParamMap& params, const Var& x_t, double t, std::size_t label, std::size_t mediators,
                OpCounter* counter = nullptr, std::vector<AttentionMaps>* maps = nullptr) const;

    Tensor predict(const Tensor& x_t, double t, std::size_t label, std::size_t mediators,
                   OpCounter* counter = nullptr, std::vector<AttentionMaps>* maps = nullptr) const;

    /// Analytic attention MACs for one forward pass at `mediators`.
    FlopsReport step_flops(std::size_t mediators) const;

private:
    ToyModelConfig cfg_;
    ParamMap params_;
    Tensor positions_;
};

/// Binds a class label to a model so it can drive the scheduled sampler.
class ConditionedModel : public VelocityModel {
public:
    ConditionedModel(const ToyModel& model, std::size_t label, std::vector<std::vector<AttentionMaps>>* map_sink = nullptr)
        : model_(model), label_(label), sink_(map_sink) {}

    Shape latent_shape() const override;
    Tensor predict(const Tensor& x, double t, std::size_t mediators, OpCounter* counter) const override;
    FlopsReport step_flops(std::size_t mediators) const override { return model_.step_flops(mediators); }

private:
    const ToyModel& model_;
    std::size_t label_;
    std::vector<std::vector<AttentionMaps>>* sink_;
};

/// One checkpoint per mediator count; the schedule switches between them.
/// Every model must share the same latent shape.
class MultiCheckpointModel : public VelocityModel {
public:
    MultiCheckpointModel(std::map<std::size_t, const ToyModel*> by_count, std::size_t label);

    Shape latent_shape() const override;
    Tensor predict(const Tensor& x, double t, std::size_t mediators, OpCounter* counter) const override;
    FlopsReport step_flops(std::size_t mediators) const override;

private:
    const ToyModel& pick(std::size_t mediators) const;
    std::map<std::size_t, const ToyModel*> models_;
    std::size_t label_;
};

// --- training --------------------------------------------------------------

struct SgdConfig {
    double lr = 0.05;
    double momentum = 0.0;
};

/// Plain SGD with optional heavy-ball momentum. Owns the momentum buffers.
/// Step k draws (t, eps) and, when several are given, the mediator count
/// from derive_seed(seed, "train", k).
struct TrainingDraw {
    double t = 0.0;
    Tensor eps;
};

class Trainer {
public:
    Trainer(ToyModel& model, SgdConfig cfg, std::uint64_t seed, std::vector<std::size_t> mediator_choices = {});

    /// One gradient step on the flow-matching MSE; returns the pre-update loss.
    double train_step(const std::vector<Sample>& batch);
    /// Same step with caller-supplied (t, eps) draws, e.g. to overfit one fixed batch.
    double train_step(const std::vector<Sample>& batch, const std::vector<TrainingDraw>& draws);
    std::size_t steps_taken() const { return step_; }

private:
    ToyModel& model_;
    SgdConfig cfg_;
    std::uint64_t seed_;
    std::vector<std::size_t> mediator_choices_;
    std::size_t step_ = 0;
    std::map<std::string, Tensor> velocity_;
};

/// Flow-matching loss and its parameter gradients for fixed (t, eps) draws.
struct LossAndGrads {
    double loss = 0.0;
    std::map<std::string, Tensor> grads;
};

/// Deterministic draws for a batch: t ~ U(0, 1), eps ~ N(0, I).
std::vector<TrainingDraw> draw_training_noise(const std::vector<Sample>& batch, std::uint64_t seed);

double flow_matching_loss(const ToyModel& model, const std::vector<Sample>& batch,
                          const std::vector<TrainingDraw>& draws, std::size_t mediators);
LossAndGrads flow_matching_loss_and_grads(const ToyModel& model, const std::vector<Sample>& batch,
                                          const std::vector<TrainingDraw>& draws, std::size_t mediators);

// --- sampling & analysis ---------------------------------------------------

struct EulerSampleResult {
    Tensor sample;
    std::vector<Tensor> trajectory;
    LatentTrace trace;
    FlopsReport flops;
    std::vector<std::uint64_t> step_macs;
};

/// Deterministic Euler sampling from N(0, I) at t = 1 with the schedule hook.
EulerSampleResult euler_sample(const ToyModel& model, std::size_t label, const SamplerConfig& cfg,
                               const MediatorSchedule& schedule);

struct CaptureSpec {
    SamplerConfig sampler;
    std::size_t samples = 1;
    MediatorSchedule schedule = MediatorSchedule::constant(4);
};

/// maps[sample][step][layer] recorded while sampling; sample s uses label s % classes
/// and seed derive_seed(sampler.seed, "capture", s).
std::vector<std::vector<std::vector<AttentionMaps>>> capture_attention_maps(const ToyModel& model,
                                                                           const CaptureSpec& spec);

RedundancyTrace capture_redundancy(const ToyModel& model, const CaptureSpec& spec,
                                   const RedundancyOptions& opts = {});

/// Fréchet distance between Gaussian fits of two sample sets, each sample
/// flattened. Inputs wider than `max_dims` are first mapped through a fixed
/// Gaussian random projection drawn from `projection_seed`. Covariances get
/// +1e-6 on the diagonal.
double fid_proxy(const std::vector<Tensor>& generated, const std::vector<Tensor>& reference,
                 std::uint64_t projection_seed = 0, std::size_t max_dims = 64);

}  // namespace mtat::diffusion
