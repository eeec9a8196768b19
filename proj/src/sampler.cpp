// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtat/diffusion.hpp"
#include "mtat/util.hpp"

namespace mtat::diffusion {

EulerSampleResult euler_sample(const ToyModel& model, std::size_t label, const SamplerConfig& cfg,
                               const MediatorSchedule& schedule) {
    const ConditionedModel bound(model, label);
    SamplingResult r = run_scheduled_sampling(bound, schedule, cfg);
    return {std::move(r.sample), std::move(r.trajectory), std::move(r.trace), r.flops, std::move(r.step_macs)};
}

std::vector<std::vector<std::vector<AttentionMaps>>> capture_attention_maps(const ToyModel& model,
                                                                           const CaptureSpec& spec) {
    std::vector<std::vector<std::vector<AttentionMaps>>> out(spec.samples);
    for (std::size_t s = 0; s < spec.samples; ++s) {
        const ConditionedModel bound(model, s % model.config().classes, &out[s]);
        SamplerConfig cfg = spec.sampler;
        cfg.seed = derive_seed(spec.sampler.seed, "capture", s);
        run_scheduled_sampling(bound, spec.schedule, cfg);
    }
    return out;
}

RedundancyTrace capture_redundancy(const ToyModel& model, const CaptureSpec& spec, const RedundancyOptions& opts) {
    const auto maps = capture_attention_maps(model, spec);
    return trace_over_steps(maps, TraceMeta{"toy-L" + std::to_string(model.config().layers), model.config().heads},
                            opts);
}

}  // namespace mtat::diffusion
