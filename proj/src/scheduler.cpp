// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtat/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <random>

#include "mtat/errors.hpp"
#include "mtat/io.hpp"
#include "mtat/util.hpp"

namespace mtat {

std::string to_string(DistanceMetric m) { return m == DistanceMetric::L1 ? "l1" : "l2"; }

DistanceMetric parse_metric(const std::string& s) {
    if (s == "l1" || s == "L1") return DistanceMetric::L1;
    if (s == "l2" || s == "L2") return DistanceMetric::L2;
    throw ConfigError("unknown distance metric \"" + s + "\" (expected l1 or l2)");
}

double latent_distance(const Tensor& a, const Tensor& b, DistanceMetric metric) {
    if (a.shape() != b.shape()) {
        throw DimensionError("latent_distance: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    if (a.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += metric == DistanceMetric::L1 ? std::abs(d) : d * d;
    }
    const double mean = acc / static_cast<double>(a.size());
    return metric == DistanceMetric::L1 ? mean : std::sqrt(mean);
}

MediatorSchedule MediatorSchedule::constant(std::size_t n) {
    MediatorSchedule s;
    s.n1 = n;
    return s;
}

void MediatorSchedule::validate() const {
    if (n1 < 1) throw ConfigError("schedule: n1 must be at least 1");
    std::size_t prev_count = n1;
    double prev_rho = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const auto& lv = levels[i];
        if (!(lv.rho >= 0.0 && lv.rho <= 1.0)) {
            throw ConfigError("schedule: rho[" + std::to_string(i) + "] = " + io::format_double(lv.rho) +
                              " is outside [0, 1]");
        }
        if (!(lv.rho < prev_rho)) throw ConfigError("schedule: thresholds must be strictly decreasing");
        if (lv.count < prev_count) throw ConfigError("schedule: mediator counts must be non-decreasing");
        prev_rho = lv.rho;
        prev_count = lv.count;
    }
}

std::vector<std::size_t> MediatorSchedule::counts() const {
    std::vector<std::size_t> out{n1};
    for (const auto& lv : levels) out.push_back(lv.count);
    return out;
}

nlohmann::json to_json(const MediatorSchedule& s) {
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& lv : s.levels) levels.push_back({{"rho", lv.rho}, {"n", lv.count}});
    return {{"n1", s.n1}, {"levels", levels}, {"metric", to_string(s.metric)}, {"latching", s.latching}};
}

MediatorSchedule schedule_from_json(const nlohmann::json& j) {
    MediatorSchedule s;
    auto count = [](const nlohmann::json& v, const std::string& field) {
        if (!v.is_number_unsigned()) throw ConfigError("schedule." + field + ": expected a non-negative integer");
        return v.get<std::size_t>();
    };
    if (!j.is_object()) throw ConfigError("schedule: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key != "n1" && key != "levels" && key != "metric" && key != "latching") {
            throw ConfigError("schedule: unknown field \"" + key + "\"");
        }
    }
    try {
        if (!j.contains("n1")) throw ConfigError("schedule.n1: missing");
        s.n1 = count(j.at("n1"), "n1");
        if (j.contains("levels")) {
            std::size_t i = 0;
            for (const auto& lv : j.at("levels")) {
                const std::string at = "levels[" + std::to_string(i++) + "]";
                if (!lv.is_object() || !lv.contains("rho") || !lv.contains("n")) {
                    throw ConfigError("schedule." + at + ": expected {\"rho\": number, \"n\": count}");
                }
                s.levels.push_back({lv.at("rho").get<double>(), count(lv.at("n"), at + ".n")});
            }
        }
        if (j.contains("metric")) s.metric = parse_metric(j.at("metric").get<std::string>());
        if (j.contains("latching")) s.latching = j.at("latching").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("schedule: ") + e.what());
    }
    s.validate();
    return s;
}

std::size_t select_mediator_count(double delta_t, double delta0, SchedulerState& state,
                                  const MediatorSchedule& schedule) {
    if (delta0 == 0.0) throw DomainError("select_mediator_count: initial difference is zero (degenerate trajectory)");
    if (!(delta0 > 0.0) || !(delta_t >= 0.0)) throw DomainError("select_mediator_count: distances must be non-negative");
    // Thresholds decrease, so the levels cleared by Δ_t form a prefix.
    std::size_t reached = 0;
    while (reached < schedule.levels.size() && delta_t <= schedule.levels[reached].rho * delta0) ++reached;
    state.level = schedule.latching ? std::max(state.level, reached) : reached;
    return schedule.count_at(state.level);
}

std::size_t two_level_count(double delta_t, double delta0, double rho, std::size_t n1, std::size_t n2) {
    if (delta0 == 0.0) throw DomainError("two_level_count: initial difference is zero (degenerate trajectory)");
    return delta_t > rho * delta0 ? n1 : n2;
}

SamplingResult integrate_scheduled(const VelocityModel& model, const MediatorSchedule& schedule, const Tensor& x_init,
                                   std::size_t steps, bool keep_trajectory) {
    if (steps < 1) throw ConfigError("sampler: steps must be at least 1");
    schedule.validate();
    if (x_init.shape() != model.latent_shape()) {
        throw DimensionError("sampler: initial latent " + shape_str(x_init.shape()) + " vs model " +
                             shape_str(model.latent_shape()));
    }
    SamplingResult res;
    Tensor x = x_init;
    if (keep_trajectory) res.trajectory.push_back(x);
    SchedulerState state;
    std::size_t n = schedule.n1;
    const double dt = 1.0 / static_cast<double>(steps);

    for (std::size_t s = 0; s < steps; ++s) {
        const double t = 1.0 - static_cast<double>(s) * dt;
        OpCounter counter;
        Tensor v;
        try {
            v = model.predict(x, t, n, &counter);
        } catch (const NumericError& e) {
            throw NumericError("sampler step " + std::to_string(s) + ": " + e.what());
        }
        Tensor next = x;
        for (std::size_t i = 0; i < next.size(); ++i) next[i] -= dt * v[i];
        for (double val : next.data()) {
            if (!std::isfinite(val)) throw NumericError("sampler step " + std::to_string(s) + ": non-finite latent");
        }
        const FlopsReport step = FlopsReport::from_counter(counter);
        res.flops += step;
        res.step_macs.push_back(step.total_macs());
        res.trace.selected.push_back(n);

        const double delta = latent_distance(next, x, schedule.metric);
        res.trace.deltas.push_back(delta);
        if (s == 0) {
            res.trace.delta0 = delta;
            res.trace.degenerate = delta == 0.0;
        }
        if (!res.trace.degenerate) n = select_mediator_count(delta, res.trace.delta0, state, schedule);

        x = std::move(next);
        if (keep_trajectory) res.trajectory.push_back(x);
    }
    res.sample = std::move(x);
    return res;
}

SamplingResult run_scheduled_sampling(const VelocityModel& model, const MediatorSchedule& schedule,
                                      const SamplerConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    Tensor noise = Tensor::randn(model.latent_shape(), rng);
    return integrate_scheduled(model, schedule, noise, cfg.steps, cfg.keep_trajectory);
}

SweepSpec SweepSpec::standard(std::size_t n1, std::size_t n2, std::size_t n3) {
    SweepSpec spec;
    for (int j = 10; j >= 0; --j) spec.rho0.push_back(j / 10.0);
    spec.n1 = n1;
    spec.n2 = n2;
    spec.n3 = n3;
    return spec;
}

std::vector<SweepPoint> build_sweep_grid(const SweepSpec& spec) {
    if (!(spec.rho_step > 0.0)) throw ConfigError("sweep: rho_step must be positive");
    std::vector<SweepPoint> points;
    for (DistanceMetric metric : spec.metrics) {
        for (double rho0 : spec.rho0) {
            auto add = [&](std::optional<double> rho1, std::vector<ScheduleLevel> levels) {
                SweepPoint p;
                p.index = points.size();
                p.rho0 = rho0;
                p.rho1 = rho1;
                p.metric = metric;
                p.schedule.n1 = spec.n1;
                p.schedule.levels = std::move(levels);
                p.schedule.metric = metric;
                p.schedule.validate();
                points.push_back(std::move(p));
            };
            if (spec.include_two_level) add(std::nullopt, {{rho0, spec.n2}});
            // rho1 walks down from rho0 on the step lattice; integer multiples avoid drift.
            const auto top = static_cast<long>(std::llround(rho0 / spec.rho_step));
            for (long j = top; j >= 0; --j) {
                const double rho1 = j == top ? rho0 : static_cast<double>(j) * spec.rho_step;
                if (rho1 < rho0) {
                    add(rho1, {{rho0, spec.n2}, {rho1, spec.n3}});
                } else {
                    // Equal thresholds are crossed together: jump straight to n3.
                    add(rho1, {{rho0, spec.n3}});
                }
            }
        }
    }
    return points;
}

std::vector<EnvelopePoint> pareto_envelope(std::vector<EnvelopePoint> points) {
    std::sort(points.begin(), points.end(), [](const EnvelopePoint& a, const EnvelopePoint& b) {
        if (a.cost != b.cost) return a.cost < b.cost;
        if (a.score != b.score) return a.score < b.score;
        return a.id < b.id;
    });
    std::vector<EnvelopePoint> out;
    for (const auto& p : points) {
        if (out.empty() || p.score < out.back().score) out.push_back(p);
    }
    return out;
}

std::vector<SweepResult> sweep_thresholds(const std::vector<SweepPoint>& points, const SweepEvaluator& eval,
                                          const SweepOptions& opts) {
    std::vector<SweepResult> results(points.size());
    parallel_for(
        points.size(),
        [&](std::size_t i) {
            results[i].point = points[i];
            try {
                results[i].outcome = eval(points[i], derive_seed(opts.base_seed, "sweep", i));
            } catch (const std::exception& e) {
                if (!opts.tolerate_failures) {
                    const std::string msg = "sweep point " + std::to_string(i) + " (rho0=" +
                                            io::format_double(points[i].rho0) + ", metric=" +
                                            to_string(points[i].metric) + "): " + e.what();
                    if (dynamic_cast<const NumericError*>(&e)) throw NumericError(msg);
                    throw Error(msg);
                }
                results[i].failed = true;
                results[i].error = e.what();
            }
        },
        opts.threads);

    std::map<DistanceMetric, std::vector<EnvelopePoint>> groups;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i].failed) continue;
        groups[results[i].point.metric].push_back({results[i].outcome.avg_gflops, results[i].outcome.quality, i});
    }
    for (auto& [metric, pts] : groups) {
        for (const auto& e : pareto_envelope(pts)) results[e.id].on_envelope = true;
    }
    return results;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepResult>& results, bool envelope_only) {
    os << "rho0,rho1,metric,avg_gflops,quality,on_envelope\n";
    for (const auto& r : results) {
        if (r.failed || (envelope_only && !r.on_envelope)) continue;
        os << io::format_double(r.point.rho0) << ',' << (r.point.rho1 ? io::format_double(*r.point.rho1) : "") << ','
           << to_string(r.point.metric) << ',' << io::format_double(r.outcome.avg_gflops) << ','
           << io::format_double(r.outcome.quality) << ',' << (r.on_envelope ? 1 : 0) << '\n';
    }
}

}  // namespace mtat
