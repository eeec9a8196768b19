// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtat/attention.hpp"
#include "mtat/tensor.hpp"

namespace mtat {

enum class DistanceMetric { L1, L2 };

std::string to_string(DistanceMetric m);
DistanceMetric parse_metric(const std::string& s);

/// Element-mean normalized distance: L1 = mean|a−b|, L2 = sqrt(mean (a−b)²).
double latent_distance(const Tensor& a, const Tensor& b, DistanceMetric metric = DistanceMetric::L1);

struct ScheduleLevel {
    double rho = 0.0;       // fraction of the initial step difference
    std::size_t count = 0;  // mediator count once Δ_t ≤ rho·Δ_0
};

/// Mediator count as a function of the latent step difference.
///
/// Starts at `n1`. Level i (count levels[i].count) is entered once
/// Δ_t ≤ levels[i].rho · Δ_0. Thresholds strictly decrease and counts never
/// decrease. With `latching` the level only ever moves up; without it the
/// level is recomputed from the current Δ_t each step.
struct MediatorSchedule {
    std::size_t n1 = 1;
    std::vector<ScheduleLevel> levels;
    DistanceMetric metric = DistanceMetric::L1;
    bool latching = true;

    static MediatorSchedule constant(std::size_t n);
    void validate() const;
    /// Count at level index (0 = n1).
    std::size_t count_at(std::size_t level) const { return level == 0 ? n1 : levels.at(level - 1).count; }
    std::vector<std::size_t> counts() const;
};

nlohmann::json to_json(const MediatorSchedule& s);
/// Parses `{"n1": 4, "levels": [{"rho": 0.6, "n": 16}], "metric": "l1"}`.
MediatorSchedule schedule_from_json(const nlohmann::json& j);

struct SchedulerState {
    std::size_t level = 0;
};

/// Advances `state` for the observed Δ_t and returns the count to use next.
/// Throws DomainError when delta0 is zero (degenerate trajectory).
std::size_t select_mediator_count(double delta_t, double delta0, SchedulerState& state,
                                  const MediatorSchedule& schedule);

/// Single-threshold rule evaluated pointwise: n1 while Δ_t > rho·Δ_0, else n2.
std::size_t two_level_count(double delta_t, double delta0, double rho, std::size_t n1, std::size_t n2);

struct LatentTrace {
    std::vector<double> deltas;          // Δ_t for each executed step; deltas[0] = Δ_0
    double delta0 = 0.0;
    std::vector<std::size_t> selected;   // mediator count used at each step
    bool degenerate = false;             // Δ_0 was zero, so no switching took place
};

/// A velocity field whose cost depends on a runtime mediator count.
class VelocityModel {
public:
    virtual ~VelocityModel() = default;
    virtual Shape latent_shape() const = 0;
    /// Predicted velocity at (x, t). Attention MACs are booked on `counter` if non-null.
    virtual Tensor predict(const Tensor& x, double t, std::size_t mediators, OpCounter* counter) const = 0;
    /// Analytic per-step cost at a given mediator count.
    virtual FlopsReport step_flops(std::size_t mediators) const = 0;
};

struct SamplerConfig {
    std::size_t steps = 16;
    std::uint64_t seed = 0;
    bool keep_trajectory = false;
};

struct SamplingResult {
    Tensor sample;
    std::vector<Tensor> trajectory;  // x before step 0, then after every step (if kept)
    LatentTrace trace;
    FlopsReport flops;                     // instrumented, summed over steps
    std::vector<std::uint64_t> step_macs;  // instrumented total MACs per step
};

/// Euler integration from t = 1 (x_init) to t = 0 with step 1/T:
/// x ← x − v(x, t)/T, t_s = 1 − s/T. After every step the latent distance
/// feeds the schedule, which sets the mediator count of the following step.
SamplingResult integrate_scheduled(const VelocityModel& model, const MediatorSchedule& schedule,
                                   const Tensor& x_init, std::size_t steps, bool keep_trajectory = false);

/// Draws x_init ~ N(0, I) from `cfg.seed` and integrates.
SamplingResult run_scheduled_sampling(const VelocityModel& model, const MediatorSchedule& schedule,
                                      const SamplerConfig& cfg);

// --- threshold sweep -------------------------------------------------------

struct SweepSpec {
    std::vector<double> rho0;  // first-threshold values
    double rho_step = 0.1;     // rho1 runs rho0, rho0 − step, …, 0
    bool include_two_level = true;
    std::size_t n1 = 4, n2 = 16, n3 = 64;
    std::vector<DistanceMetric> metrics{DistanceMetric::L1};

    /// ρ0 ∈ {1.0, 0.9, …, 0.0}.
    static SweepSpec standard(std::size_t n1, std::size_t n2, std::size_t n3);
};

struct SweepPoint {
    std::size_t index = 0;
    double rho0 = 0.0;
    std::optional<double> rho1;  // empty for the two-level (single threshold) schedule
    DistanceMetric metric = DistanceMetric::L1;
    MediatorSchedule schedule;
};

std::vector<SweepPoint> build_sweep_grid(const SweepSpec& spec);

struct SweepOutcome {
    double avg_gflops = 0.0;
    double quality = 0.0;  // lower is better
};

using SweepEvaluator = std::function<SweepOutcome(const SweepPoint&, std::uint64_t seed)>;

struct SweepResult {
    SweepPoint point;
    SweepOutcome outcome;
    bool on_envelope = false;
    bool failed = false;
    std::string error;
};

struct SweepOptions {
    std::uint64_t base_seed = 0;
    std::size_t threads = 1;
    bool tolerate_failures = false;
};

/// Evaluates every point; point i receives derive_seed(base_seed, "sweep", i).
/// Envelope flags are computed per distance metric.
std::vector<SweepResult> sweep_thresholds(const std::vector<SweepPoint>& points, const SweepEvaluator& eval,
                                          const SweepOptions& opts = {});

struct EnvelopePoint {
    double cost = 0.0;
    double score = 0.0;
    std::size_t id = 0;
};

/// Non-dominated subset (lower cost and lower score are better) sorted by cost.
/// Exact duplicates keep the lowest id.
std::vector<EnvelopePoint> pareto_envelope(std::vector<EnvelopePoint> points);

/// `rho0,rho1,metric,avg_gflops,quality,on_envelope`; rho1 is empty for two-level points.
void write_sweep_csv(std::ostream& os, const std::vector<SweepResult>& results, bool envelope_only = false);

}  // namespace mtat
