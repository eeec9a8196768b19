// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtat/diffusion.hpp"
#include "mtat/scheduler.hpp"

namespace mtat::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kNumeric = 3 };

struct TrainOptions {
    std::size_t steps = 200;
    std::size_t batch = 8;
    double lr = 0.05;
    double momentum = 0.0;
    bool fixed_batch = false;
    std::vector<std::size_t> mediator_choices;  // empty: model.mediators only
};

struct SampleOptions {
    std::size_t steps = 16;
    std::size_t samples = 4;
    bool keep_trajectory = false;
};

struct RedundancyOptionsCfg {
    std::size_t samples = 1;
    std::uint64_t pair_cap = 0;
};

struct SweepOptionsCfg {
    std::vector<double> rho0{1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0};
    double rho_step = 0.1;
    bool include_two_level = true;
    std::size_t n1 = 4, n2 = 16, n3 = 64;
    std::vector<DistanceMetric> metrics{DistanceMetric::L1};
    std::size_t samples = 8;
    std::size_t reference_size = 128;
    bool common_noise = true;
    std::size_t threads = 0;  // 0: thread_budget()
    bool tolerate_failures = true;
};

struct FlopsOptions {
    std::vector<std::size_t> mediators{1, 4, 16, 64};
    bool preset = true;
};

struct BenchOptions {
    std::vector<std::size_t> tokens{64, 256, 1024, 4096};
    std::size_t hidden = 16;
    std::size_t heads = 1;
    std::size_t mediators = 16;
    std::size_t repeats = 1;
    bool degenerate = true;
};

/// Everything a command needs; the resolved copy is written next to its outputs.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out = "mtat_out";
    diffusion::ToyModelConfig model;
    std::size_t dataset_size = 256;
    TrainOptions train;
    SampleOptions sampler;
    std::optional<MediatorSchedule> schedule;
    std::string checkpoint;
    std::map<std::size_t, std::string> checkpoints;  // mediator count → checkpoint path
    RedundancyOptionsCfg redundancy;
    SweepOptionsCfg sweep;
    FlopsOptions flops;
    BenchOptions bench;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Unknown fields and wrongly typed values raise ConfigError naming the field.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Parses config text; syntax errors are reported as `<origin>:<line>:<column>: ...`.
RunConfig parse_run_config(const std::string& text, const std::string& origin);

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mtat::cli
