// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtat/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>
#include <type_traits>

#include "mtat/errors.hpp"
#include "mtat/io.hpp"
#include "mtat/util.hpp"

namespace mtat::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtat::diffusion;

// --- config parsing ----------------------------------------------------------

namespace {

std::string join_field(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

[[noreturn]] void bad_field(const std::string& name, const std::string& what, const json& got) {
    throw ConfigError("field '" + name + "': " + what + ", got " + got.type_name() + " " + got.dump());
}

void expect_object(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError((path.empty() ? std::string("config") : "field '" + path + "'") +
                                          ": expected a JSON object, got " + j.type_name());
}

void check_keys(const json& j, const std::string& path, std::initializer_list<std::string_view> keys) {
    for (const auto& [key, value] : j.items()) {
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
            throw ConfigError("unknown field '" + join_field(path, key) + "'");
        }
    }
}

template <class T>
T convert(const json& v, const std::string& name) {
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) bad_field(name, "expected true or false", v);
        return v.get<bool>();
    } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) bad_field(name, "expected a non-negative integer", v);
        return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) bad_field(name, "expected a number", v);
        return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) bad_field(name, "expected a string", v);
        return v.get<std::string>();
    } else {
        static_assert(sizeof(T) == 0, "unsupported config field type");
    }
}

template <class T>
void read(const json& j, const std::string& path, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    out = convert<T>(*it, join_field(path, key));
}

template <class T>
void read(const json& j, const std::string& path, const char* key, std::vector<T>& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    const std::string name = join_field(path, key);
    if (!it->is_array()) bad_field(name, "expected an array", *it);
    out.clear();
    for (std::size_t i = 0; i < it->size(); ++i) out.push_back(convert<T>((*it)[i], name + "[" + std::to_string(i) + "]"));
}

const json* section(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return nullptr;
    expect_object(*it, key);
    return &*it;
}

std::size_t parse_count_key(const std::string& key, const std::string& path) {
    std::size_t n = 0;
    const auto [end, ec] = std::from_chars(key.data(), key.data() + key.size(), n);
    if (ec != std::errc() || end != key.data() + key.size()) {
        throw ConfigError("field '" + join_field(path, key) + "': key must be a mediator count");
    }
    return n;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
    expect_object(j, "");
    check_keys(j, "", {"seed", "out", "model", "dataset", "interpolant", "train", "sampler", "schedule", "checkpoint",
                       "checkpoints", "redundancy", "sweep", "flops", "bench"});
    RunConfig c;
    read(j, "", "seed", c.seed);
    read(j, "", "out", c.out);
    read(j, "", "checkpoint", c.checkpoint);

    if (const json* m = section(j, "model")) c.model = model_config_from_json(*m);
    c.model.validate();

    if (const json* d = section(j, "dataset")) {
        check_keys(*d, "dataset", {"size"});
        read(*d, "dataset", "size", c.dataset_size);
    }
    if (const json* ip = section(j, "interpolant")) {
        check_keys(*ip, "interpolant", {"kind", "target"});
        std::string kind = "linear", target = "velocity";
        read(*ip, "interpolant", "kind", kind);
        read(*ip, "interpolant", "target", target);
        if (kind != "linear") throw ConfigError("field 'interpolant.kind': only \"linear\" is supported");
        if (target != "velocity") throw ConfigError("field 'interpolant.target': only \"velocity\" is supported");
    }
    if (const json* t = section(j, "train")) {
        check_keys(*t, "train", {"steps", "batch", "lr", "momentum", "fixed_batch", "mediator_choices"});
        read(*t, "train", "steps", c.train.steps);
        read(*t, "train", "batch", c.train.batch);
        read(*t, "train", "lr", c.train.lr);
        read(*t, "train", "momentum", c.train.momentum);
        read(*t, "train", "fixed_batch", c.train.fixed_batch);
        read(*t, "train", "mediator_choices", c.train.mediator_choices);
    }
    if (const json* s = section(j, "sampler")) {
        check_keys(*s, "sampler", {"steps", "samples", "keep_trajectory", "integrator"});
        read(*s, "sampler", "steps", c.sampler.steps);
        read(*s, "sampler", "samples", c.sampler.samples);
        read(*s, "sampler", "keep_trajectory", c.sampler.keep_trajectory);
        std::string integrator = "euler";
        read(*s, "sampler", "integrator", integrator);
        if (integrator != "euler") throw ConfigError("field 'sampler.integrator': only \"euler\" is supported");
    }
    if (const json* s = section(j, "schedule")) c.schedule = schedule_from_json(*s);
    if (const json* cps = section(j, "checkpoints")) {
        for (const auto& [key, value] : cps->items()) {
            c.checkpoints[parse_count_key(key, "checkpoints")] = convert<std::string>(value, "checkpoints." + key);
        }
    }
    if (const json* r = section(j, "redundancy")) {
        check_keys(*r, "redundancy", {"samples", "pair_cap"});
        read(*r, "redundancy", "samples", c.redundancy.samples);
        read(*r, "redundancy", "pair_cap", c.redundancy.pair_cap);
    }
    if (const json* s = section(j, "sweep")) {
        check_keys(*s, "sweep", {"rho0", "rho_step", "include_two_level", "n1", "n2", "n3", "metrics", "samples",
                                 "reference_size", "common_noise", "threads", "tolerate_failures"});
        read(*s, "sweep", "rho0", c.sweep.rho0);
        read(*s, "sweep", "rho_step", c.sweep.rho_step);
        read(*s, "sweep", "include_two_level", c.sweep.include_two_level);
        read(*s, "sweep", "n1", c.sweep.n1);
        read(*s, "sweep", "n2", c.sweep.n2);
        read(*s, "sweep", "n3", c.sweep.n3);
        std::vector<std::string> metrics;
        read(*s, "sweep", "metrics", metrics);
        if (s->contains("metrics")) {
            c.sweep.metrics.clear();
            for (const auto& m : metrics) c.sweep.metrics.push_back(parse_metric(m));
        }
        read(*s, "sweep", "samples", c.sweep.samples);
        read(*s, "sweep", "reference_size", c.sweep.reference_size);
        read(*s, "sweep", "common_noise", c.sweep.common_noise);
        read(*s, "sweep", "threads", c.sweep.threads);
        read(*s, "sweep", "tolerate_failures", c.sweep.tolerate_failures);
    }
    if (const json* f = section(j, "flops")) {
        check_keys(*f, "flops", {"mediators", "preset"});
        read(*f, "flops", "mediators", c.flops.mediators);
        read(*f, "flops", "preset", c.flops.preset);
    }
    if (const json* b = section(j, "bench")) {
        check_keys(*b, "bench", {"tokens", "hidden", "heads", "mediators", "repeats", "degenerate"});
        read(*b, "bench", "tokens", c.bench.tokens);
        read(*b, "bench", "hidden", c.bench.hidden);
        read(*b, "bench", "heads", c.bench.heads);
        read(*b, "bench", "mediators", c.bench.mediators);
        read(*b, "bench", "repeats", c.bench.repeats);
        read(*b, "bench", "degenerate", c.bench.degenerate);
    }

    if (c.sampler.steps < 1) throw ConfigError("field 'sampler.steps': must be at least 1");
    if (c.train.batch < 1) throw ConfigError("field 'train.batch': must be at least 1");
    if (c.sweep.samples < 1 || c.sweep.reference_size < 1) {
        throw ConfigError("fields 'sweep.samples' and 'sweep.reference_size' must be at least 1");
    }
    if (!(c.sweep.rho_step > 0.0)) throw ConfigError("field 'sweep.rho_step': must be positive");
    if (c.bench.repeats < 1) throw ConfigError("field 'bench.repeats': must be at least 1");
    if (c.out.empty()) throw ConfigError("field 'out': must not be empty");
    return c;
}

json to_json(const RunConfig& c) {
    json metrics = json::array();
    for (auto m : c.sweep.metrics) metrics.push_back(to_string(m));
    json checkpoints = json::object();
    for (const auto& [n, path] : c.checkpoints) checkpoints[std::to_string(n)] = path;
    return {
        {"seed", c.seed},
        {"out", c.out},
        {"model", diffusion::to_json(c.model)},
        {"dataset", {{"size", c.dataset_size}}},
        {"interpolant", {{"kind", "linear"}, {"target", "velocity"}}},
        {"train",
         {{"steps", c.train.steps},
          {"batch", c.train.batch},
          {"lr", c.train.lr},
          {"momentum", c.train.momentum},
          {"fixed_batch", c.train.fixed_batch},
          {"mediator_choices", c.train.mediator_choices}}},
        {"sampler",
         {{"steps", c.sampler.steps},
          {"samples", c.sampler.samples},
          {"keep_trajectory", c.sampler.keep_trajectory},
          {"integrator", "euler"}}},
        {"schedule", c.schedule ? mtat::to_json(*c.schedule) : json(nullptr)},
        {"checkpoint", c.checkpoint},
        {"checkpoints", checkpoints},
        {"redundancy", {{"samples", c.redundancy.samples}, {"pair_cap", c.redundancy.pair_cap}}},
        {"sweep",
         {{"rho0", c.sweep.rho0},
          {"rho_step", c.sweep.rho_step},
          {"include_two_level", c.sweep.include_two_level},
          {"n1", c.sweep.n1},
          {"n2", c.sweep.n2},
          {"n3", c.sweep.n3},
          {"metrics", metrics},
          {"samples", c.sweep.samples},
          {"reference_size", c.sweep.reference_size},
          {"common_noise", c.sweep.common_noise},
          {"threads", c.sweep.threads},
          {"tolerate_failures", c.sweep.tolerate_failures}}},
        {"flops", {{"mediators", c.flops.mediators}, {"preset", c.flops.preset}}},
        {"bench",
         {{"tokens", c.bench.tokens},
          {"hidden", c.bench.hidden},
          {"heads", c.bench.heads},
          {"mediators", c.bench.mediators},
          {"repeats", c.bench.repeats},
          {"degenerate", c.bench.degenerate}}},
    };
}

namespace {

json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < end; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    const json j = parse_json_text(text, origin);
    try {
        return run_config_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
}

// --- commands ----------------------------------------------------------------

namespace {

std::string padded(std::size_t i, int width = 3) {
    std::string s = std::to_string(i);
    return s.size() >= static_cast<std::size_t>(width) ? s : std::string(width - s.size(), '0') + s;
}

fs::path prepare_out(const RunConfig& cfg) {
    fs::path dir(cfg.out);
    fs::create_directories(dir);
    io::write_text_atomic(dir / "config.resolved.json", to_json(cfg).dump(2) + "\n");
    return dir;
}

struct LoadedModels {
    std::vector<std::unique_ptr<ToyModel>> owned;
    std::map<std::size_t, const ToyModel*> by_count;

    const ToyModel& primary() const { return *owned.front(); }

    std::unique_ptr<VelocityModel> bind(std::size_t label) const {
        if (!by_count.empty()) return std::make_unique<MultiCheckpointModel>(by_count, label);
        return std::make_unique<ConditionedModel>(primary(), label);
    }
};

LoadedModels load_models(const RunConfig& cfg, bool allow_fresh, std::ostream& log) {
    LoadedModels m;
    if (!cfg.checkpoints.empty()) {
        for (const auto& [n, path] : cfg.checkpoints) {
            m.owned.push_back(std::make_unique<ToyModel>(cfg.model, io::load_checkpoint(path)));
            m.by_count[n] = m.owned.back().get();
        }
    } else if (!cfg.checkpoint.empty()) {
        m.owned.push_back(std::make_unique<ToyModel>(cfg.model, io::load_checkpoint(cfg.checkpoint)));
    } else if (allow_fresh) {
        log << "no checkpoint given; using freshly initialized weights\n";
        m.owned.push_back(std::make_unique<ToyModel>(cfg.model, cfg.seed));
    } else {
        throw UsageError("this command needs --checkpoint (or a \"checkpoints\" map in the config)");
    }
    return m;
}

MediatorSchedule schedule_or_default(const RunConfig& cfg) {
    return cfg.schedule ? *cfg.schedule : MediatorSchedule::constant(cfg.model.mediators);
}

void check_schedule_counts(const RunConfig& cfg, const MediatorSchedule& s) {
    for (std::size_t n : s.counts()) cfg.model.validate_mediators(n);
}

std::string csv_text(const std::function<void(std::ostream&)>& fn) {
    std::ostringstream os;
    fn(os);
    return os.str();
}

std::vector<Sample> pick_batch(const Dataset& ds, std::size_t batch, std::uint64_t seed) {
    std::vector<std::size_t> idx(ds.samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<std::size_t> chosen;
    std::mt19937_64 rng(seed);
    std::ranges::sample(idx, std::back_inserter(chosen), static_cast<std::ptrdiff_t>(batch), rng);
    std::vector<Sample> out;
    out.reserve(chosen.size());
    for (std::size_t i : chosen) out.push_back(ds.samples[i]);
    return out;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    const fs::path dir = prepare_out(cfg);
    ToyModel model(cfg.model, cfg.seed);
    const Dataset ds = synth_dataset(
        {cfg.dataset_size, cfg.model.classes, cfg.model.height, cfg.model.width, cfg.model.channels, cfg.seed});
    if (cfg.train.steps > 0 && ds.samples.size() < cfg.train.batch) {
        throw ConfigError("train: batch size " + std::to_string(cfg.train.batch) + " exceeds dataset size " +
                          std::to_string(ds.samples.size()));
    }
    Trainer trainer(model, {cfg.train.lr, cfg.train.momentum}, cfg.seed, cfg.train.mediator_choices);
    const std::vector<Sample> fixed =
        cfg.train.fixed_batch && cfg.train.steps > 0 ? pick_batch(ds, cfg.train.batch, derive_seed(cfg.seed, "batch"))
                                                     : std::vector<Sample>{};
    const std::vector<TrainingDraw> fixed_draws =
        fixed.empty() ? std::vector<TrainingDraw>{} : draw_training_noise(fixed, derive_seed(cfg.seed, "batch-noise"));
    std::string csv = "step,loss\n";
    const std::size_t every = std::max<std::size_t>(1, cfg.train.steps / 10);
    for (std::size_t step = 0; step < cfg.train.steps; ++step) {
        const double loss =
            cfg.train.fixed_batch
                ? trainer.train_step(fixed, fixed_draws)
                : trainer.train_step(pick_batch(ds, cfg.train.batch, derive_seed(cfg.seed, "batch", step)));
        csv += std::to_string(step) + "," + io::format_double(loss) + "\n";
        if (step % every == 0 || step + 1 == cfg.train.steps) {
            out << "step " << step << " loss " << io::format_double(loss) << "\n";
        }
    }
    io::save_checkpoint(dir / "model.ckpt", model.named_tensors());
    io::write_text_atomic(dir / "loss.csv", csv);
    out << "wrote " << (dir / "model.ckpt").string() << " (" << model.param_count() << " parameters)\n";
    return kOk;
}

int cmd_sample(const RunConfig& cfg, std::ostream& out) {
    const LoadedModels models = load_models(cfg, false, out);
    const MediatorSchedule schedule = schedule_or_default(cfg);
    check_schedule_counts(cfg, schedule);
    const fs::path dir = prepare_out(cfg);

    FlopsReport total;
    json per_sample = json::array();
    for (std::size_t i = 0; i < cfg.sampler.samples; ++i) {
        const std::size_t label = i % cfg.model.classes;
        const auto bound = models.bind(label);
        const SamplerConfig sc{cfg.sampler.steps, derive_seed(cfg.seed, "sampling", i), cfg.sampler.keep_trajectory};
        const SamplingResult r = run_scheduled_sampling(*bound, schedule, sc);

        const fs::path sdir = dir / ("sample_" + padded(i));
        fs::create_directories(sdir);
        std::string trace = "step,delta,n_t,step_macs\n";
        FlopsReport analytic;
        for (std::size_t s = 0; s < r.trace.deltas.size(); ++s) {
            trace += std::to_string(s) + "," + io::format_double(r.trace.deltas[s]) + "," +
                     std::to_string(r.trace.selected[s]) + "," + std::to_string(r.step_macs[s]) + "\n";
            analytic += bound->step_flops(r.trace.selected[s]);
        }
        io::write_text_atomic(sdir / "trace.csv", trace);
        io::save_tensor(sdir / "sample.mtat", r.sample);
        if (cfg.sampler.keep_trajectory) {
            fs::create_directories(sdir / "trajectory");
            for (std::size_t s = 0; s < r.trajectory.size(); ++s) {
                io::save_tensor(sdir / "trajectory" / ("x_" + padded(s) + ".mtat"), r.trajectory[s]);
            }
        }
        total += r.flops;
        per_sample.push_back({{"sample", i},
                              {"label", label},
                              {"degenerate", r.trace.degenerate},
                              {"mediator_counts", r.trace.selected},
                              {"flops", to_json(r.flops)},
                              {"matches_analytic", analytic == r.flops}});
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, cfg.sampler.samples));
    const json report = {{"samples", cfg.sampler.samples},
                         {"steps", cfg.sampler.steps},
                         {"scope", "attention layers only"},
                         {"total", to_json(total)},
                         {"avg_gflops_per_sample", static_cast<double>(total.total_flops()) / 1e9 / n},
                         {"per_sample", per_sample}};
    io::write_text_atomic(dir / "flops.json", report.dump(2) + "\n");
    out << "wrote " << cfg.sampler.samples << " samples to " << dir.string() << "\n";
    return kOk;
}

double slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    if (xs.size() < 2) return 0.0;
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    return sxx == 0.0 ? 0.0 : sxy / sxx;
}

int cmd_redundancy(const RunConfig& cfg, const std::string& dump_maps, std::ostream& out) {
    const LoadedModels models = load_models(cfg, true, out);
    if (!models.by_count.empty()) throw UsageError("redundancy: use a single --checkpoint");
    const ToyModel& model = models.primary();
    CaptureSpec spec;
    spec.sampler = SamplerConfig{cfg.sampler.steps, derive_seed(cfg.seed, "redundancy"), false};
    spec.samples = cfg.redundancy.samples;
    spec.schedule = schedule_or_default(cfg);
    check_schedule_counts(cfg, spec.schedule);
    if (spec.samples < 1) throw ConfigError("field 'redundancy.samples': must be at least 1");
    const fs::path dir = prepare_out(cfg);

    const auto maps = capture_attention_maps(model, spec);
    const RedundancyOptions opts{cfg.redundancy.pair_cap, derive_seed(cfg.seed, "pairs")};
    const RedundancyTrace trace =
        trace_over_steps(maps, TraceMeta{"toy-L" + std::to_string(cfg.model.layers), cfg.model.heads}, opts);
    io::write_text_atomic(dir / "redundancy.csv", csv_text([&](std::ostream& os) { write_trace_csv(os, trace); }));

    if (!dump_maps.empty()) {
        const fs::path mdir(dump_maps);
        fs::create_directories(mdir);
        std::string index = "sample,step,layer,head,file\n";
        for (std::size_t s = 0; s < maps.size(); ++s) {
            for (std::size_t k = 0; k < maps[s].size(); ++k) {
                for (std::size_t l = 0; l < maps[s][k].size(); ++l) {
                    const auto heads = full_attention_maps(maps[s][k][l]);
                    for (std::size_t m = 0; m < heads.size(); ++m) {
                        const std::string file = "s" + padded(s) + "_t" + padded(k) + "_l" + padded(l) + "_h" +
                                                 padded(m) + ".mtat";
                        io::save_tensor(mdir / file, heads[m]);
                        index += std::to_string(s) + "," + std::to_string(k) + "," + std::to_string(l) + "," +
                                 std::to_string(m) + "," + file + "\n";
                    }
                }
            }
        }
        io::write_text_atomic(mdir / "index.csv", index);
    }

    json layers = json::array();
    for (std::size_t l = 0; l < trace.layers(); ++l) {
        std::vector<double> steps(trace.steps());
        std::iota(steps.begin(), steps.end(), 0.0);
        const double sl = slope(steps, trace.scores[l]);
        const char* trend = sl > 0.0 ? "rising" : (sl < 0.0 ? "falling" : "flat");
        layers.push_back({{"layer", l},
                          {"slope_per_step", sl},
                          {"first", trace.scores[l].front()},
                          {"last", trace.scores[l].back()},
                          {"trend", trend}});
        out << "layer " << l << ": scores " << trend << " along steps (slope " << io::format_double(sl)
            << "; rising scores mean redundancy falls)\n";
    }
    const json summary = {{"model_id", trace.model_id},
                          {"samples", trace.samples},
                          {"heads", trace.heads},
                          {"steps", trace.steps()},
                          {"layers", layers}};
    io::write_text_atomic(dir / "redundancy_summary.json", summary.dump(2) + "\n");
    return kOk;
}

int cmd_sweep(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const LoadedModels models = load_models(cfg, true, out);
    SweepSpec spec;
    spec.rho0 = cfg.sweep.rho0;
    spec.rho_step = cfg.sweep.rho_step;
    spec.include_two_level = cfg.sweep.include_two_level;
    spec.n1 = cfg.sweep.n1;
    spec.n2 = cfg.sweep.n2;
    spec.n3 = cfg.sweep.n3;
    spec.metrics = cfg.sweep.metrics;
    for (std::size_t n : {spec.n1, spec.n2, spec.n3}) cfg.model.validate_mediators(n);
    const std::vector<SweepPoint> points = build_sweep_grid(spec);
    const fs::path dir = prepare_out(cfg);

    const Dataset reference = synth_dataset({cfg.sweep.reference_size, cfg.model.classes, cfg.model.height,
                                             cfg.model.width, cfg.model.channels, derive_seed(cfg.seed, "reference")});
    std::vector<Tensor> ref_x;
    for (const auto& s : reference.samples) ref_x.push_back(s.x);
    const std::uint64_t fid_seed = derive_seed(cfg.seed, "fid");

    const SweepEvaluator eval = [&](const SweepPoint& p, std::uint64_t point_seed) {
        std::vector<Tensor> generated;
        double gflops = 0.0;
        for (std::size_t s = 0; s < cfg.sweep.samples; ++s) {
            const auto bound = models.bind(s % cfg.model.classes);
            const std::uint64_t noise_seed = cfg.sweep.common_noise ? derive_seed(cfg.seed, "sweep-noise", s)
                                                                    : derive_seed(point_seed, "noise", s);
            SamplingResult r = run_scheduled_sampling(*bound, p.schedule, {cfg.sampler.steps, noise_seed, false});
            gflops += static_cast<double>(r.flops.total_flops()) / 1e9;
            generated.push_back(std::move(r.sample));
        }
        return SweepOutcome{gflops / static_cast<double>(cfg.sweep.samples), fid_proxy(generated, ref_x, fid_seed)};
    };
    const std::size_t threads = cfg.sweep.threads == 0 ? thread_budget() : cfg.sweep.threads;
    const auto results = sweep_thresholds(points, eval, {cfg.seed, threads, cfg.sweep.tolerate_failures});

    std::size_t failed = 0, on_env = 0;
    for (const auto& r : results) {
        if (r.failed) {
            ++failed;
            err << "sweep point " << r.point.index << " failed: " << r.error << "\n";
        }
        on_env += r.on_envelope ? 1 : 0;
    }
    io::write_text_atomic(dir / "sweep.csv", csv_text([&](std::ostream& os) { write_sweep_csv(os, results); }));
    io::write_text_atomic(dir / "envelope.csv",
                          csv_text([&](std::ostream& os) { write_sweep_csv(os, results, true); }));
    out << "evaluated " << results.size() - failed << " of " << results.size() << " grid points; " << on_env
        << " on the envelope (quality is a Frechet-distance proxy, lower is better)\n";
    return kOk;
}

struct FlopsRow {
    std::string setup;
    std::string kind;
    std::size_t mediators = 0;  // 0 for vanilla
    std::size_t layers = 0;
    AttentionConfig acfg;
    FlopsReport per_layer;
};

void flops_rows_for(const std::string& setup, const AttentionConfig& acfg, std::size_t layers,
                    const std::vector<std::size_t>& counts, std::vector<FlopsRow>& rows, std::ostream& out) {
    rows.push_back({setup, "vanilla", 0, layers, acfg, attention_flops(acfg)});
    for (std::size_t n : counts) {
        try {
            rows.push_back({setup, "mediator", n, layers, acfg, mediator_flops(acfg, mediator_grid_for(n, acfg))});
        } catch (const Error& e) {
            out << "note: skipping n=" << n << " for " << setup << ": " << e.what() << "\n";
        }
    }
}

int cmd_flops(const RunConfig& cfg, std::ostream& out) {
    const fs::path dir = prepare_out(cfg);
    std::vector<FlopsRow> rows;
    const std::string toy = "toy-N" + std::to_string(cfg.model.tokens()) + "-C" + std::to_string(cfg.model.hidden) +
                            "-L" + std::to_string(cfg.model.layers);
    flops_rows_for(toy, cfg.model.attention_config(), cfg.model.layers, cfg.flops.mediators, rows, out);
    if (cfg.flops.preset) {
        flops_rows_for("preset-N256-C384-L12", AttentionConfig::grid(16, 16, 384, 6), 12, cfg.flops.mediators, rows,
                       out);
    }

    std::string csv =
        "setup,kind,mediators,layers,tokens,hidden,heads,interaction_macs_per_layer,total_macs_per_layer,"
        "total_macs,total_gflops\n";
    json jrows = json::array();
    out << std::left << std::setw(22) << "setup" << std::setw(10) << "kind" << std::setw(6) << "n" << std::right
        << std::setw(20) << "interaction/layer" << std::setw(18) << "total/layer" << std::setw(16) << "total MACs"
        << std::setw(14) << "GFLOPs" << "\n";
    for (const auto& r : rows) {
        const std::uint64_t total = r.per_layer.total_macs() * r.layers;
        const double gflops = 2.0 * static_cast<double>(total) / 1e9;
        const std::string n = r.mediators ? std::to_string(r.mediators) : "";
        csv += r.setup + "," + r.kind + "," + n + "," + std::to_string(r.layers) + "," +
               std::to_string(r.acfg.tokens) + "," + std::to_string(r.acfg.hidden) + "," +
               std::to_string(r.acfg.heads) + "," + std::to_string(r.per_layer.interaction()) + "," +
               std::to_string(r.per_layer.total_macs()) + "," + std::to_string(total) + "," +
               io::format_double(gflops) + "\n";
        out << std::left << std::setw(22) << r.setup << std::setw(10) << r.kind << std::setw(6) << (n.empty() ? "-" : n)
            << std::right << std::setw(20) << r.per_layer.interaction() << std::setw(18) << r.per_layer.total_macs()
            << std::setw(16) << total << std::setw(14) << io::format_double(gflops) << "\n";
        jrows.push_back({{"setup", r.setup},
                         {"kind", r.kind},
                         {"mediators", r.mediators ? json(r.mediators) : json(nullptr)},
                         {"layers", r.layers},
                         {"tokens", r.acfg.tokens},
                         {"hidden", r.acfg.hidden},
                         {"heads", r.acfg.heads},
                         {"per_layer", to_json(r.per_layer)},
                         {"total_macs", total},
                         {"total_gflops", gflops}});
    }
    const std::vector<std::string> notes = {
        "counts cover attention layers only: projections, interaction, pooling, depthwise conv; FLOPs = 2 x MACs",
        "reference context (published, not reconstructed): SiT-S/2 vanilla 6.06 GFLOPs, "
        "n=64 mediators 5.78 GFLOPs (whole network)",
    };
    for (const auto& n : notes) out << "note: " << n << "\n";
    io::write_text_atomic(dir / "flops.csv", csv);
    io::write_text_atomic(dir / "flops.json", json({{"rows", jrows}, {"notes", notes}}).dump(2) + "\n");
    return kOk;
}

std::pair<std::size_t, std::size_t> square_grid(std::size_t n) {
    auto h = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
    while (h > 1 && n % h != 0) --h;
    return {h, n / h};
}

struct BenchRow {
    std::string series;
    std::size_t tokens = 0;
    std::size_t mediators = 0;
    std::uint64_t interaction = 0;
    std::uint64_t total = 0;
    double seconds = 0.0;
};

int cmd_bench(const RunConfig& cfg, std::ostream& out) {
    const BenchOptions& b = cfg.bench;
    if (b.tokens.empty()) throw ConfigError("field 'bench.tokens': must not be empty");
    const fs::path dir = prepare_out(cfg);

    auto measure = [&](const std::string& series, std::size_t n_tokens, std::size_t mediators) {
        const auto [gh, gw] = square_grid(n_tokens);
        const AttentionConfig acfg = AttentionConfig::grid(gh, gw, b.hidden, b.heads);
        std::mt19937_64 rng(derive_seed(cfg.seed, "bench", n_tokens));
        const Var z(Tensor::randn({n_tokens, b.hidden}, rng));
        const MultiHeadParams params =
            MultiHeadParams::random(b.hidden, rng, 1.0 / std::sqrt(static_cast<double>(b.hidden)));
        const Var dw(Tensor::randn({3, 3, b.hidden}, rng, 0.1));
        std::optional<MediatorConfig> mcfg;
        if (mediators) mcfg = mediator_grid_for(mediators, acfg);

        BenchRow row{series, n_tokens, mediators, 0, 0, 0.0};
        double best = 0.0;
        for (std::size_t rep = 0; rep < b.repeats; ++rep) {
            OpCounter counter;
            const auto start = std::chrono::steady_clock::now();
            if (mcfg) {
                mediator_attention(z, params, dw, acfg, *mcfg, &counter, false);
            } else {
                multi_head_attention(z, params, acfg, &counter, false);
            }
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            best = rep == 0 ? secs : std::min(best, secs);
            const FlopsReport rep_flops = FlopsReport::from_counter(counter);
            row.interaction = rep_flops.interaction();
            row.total = rep_flops.total_macs();
        }
        row.seconds = best;
        out << series << " N=" << n_tokens << " interaction MACs " << row.interaction << " in "
            << io::format_double(best) << " s\n";
        return row;
    };

    std::vector<BenchRow> rows;
    for (std::size_t n : b.tokens) rows.push_back(measure("vanilla", n, 0));
    for (std::size_t n : b.tokens) rows.push_back(measure("mediator", n, b.mediators));
    if (b.degenerate) rows.push_back(measure("mediator_n_eq_N", b.tokens.front(), b.tokens.front()));

    std::string csv = "series,tokens,hidden,heads,mediators,interaction_macs,total_macs,seconds\n";
    for (const auto& r : rows) {
        csv += r.series + "," + std::to_string(r.tokens) + "," + std::to_string(b.hidden) + "," +
               std::to_string(b.heads) + "," + (r.mediators ? std::to_string(r.mediators) : "") + "," +
               std::to_string(r.interaction) + "," + std::to_string(r.total) + "," + io::format_double(r.seconds) +
               "\n";
    }
    std::string fit = "series,points,mac_exponent,time_exponent\n";
    for (const std::string series : {"vanilla", "mediator"}) {
        std::vector<double> lx, lm, lt;
        bool timed = true;
        for (const auto& r : rows) {
            if (r.series != series) continue;
            lx.push_back(std::log(static_cast<double>(r.tokens)));
            lm.push_back(std::log(static_cast<double>(r.interaction)));
            lt.push_back(std::log(std::max(r.seconds, 1e-12)));
            timed = timed && r.seconds > 0.0;
        }
        const double mac_exp = slope(lx, lm), time_exp = timed ? slope(lx, lt) : std::nan("");
        fit += series + "," + std::to_string(lx.size()) + "," + io::format_double(mac_exp) + "," +
               io::format_double(time_exp) + "\n";
        out << series << ": MAC exponent " << io::format_double(mac_exp) << ", wall-clock exponent "
            << io::format_double(time_exp) << " (informational)\n";
    }
    io::write_text_atomic(dir / "bench.csv", csv);
    io::write_text_atomic(dir / "bench_fit.csv", fit);
    return kOk;
}

}  // namespace

// --- entry point -------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mediator-token attention toolkit: train, sample, analyze, sweep, count, benchmark.", "mtat"};
    app.require_subcommand(1, 1);

    std::string config_path, out_dir, schedule_arg, checkpoint, dump_maps;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    struct Flags {
        CLI::Option* seed = nullptr;
        CLI::Option* out = nullptr;
        CLI::Option* steps = nullptr;
        CLI::Option* schedule = nullptr;
        CLI::Option* checkpoint = nullptr;
    };
    std::map<std::string, Flags> flags;

    auto add = [&](const char* name, const char* help, bool with_steps, bool with_schedule, bool with_ckpt) {
        CLI::App* sub = app.add_subcommand(name, help);
        Flags f;
        sub->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
        f.seed = sub->add_option("--seed", seed, "base seed for every random stream");
        f.out = sub->add_option("--out", out_dir, "output directory");
        if (with_steps) f.steps = sub->add_option("--steps", steps, "training steps (train) or sampler steps");
        if (with_schedule) f.schedule = sub->add_option("--schedule", schedule_arg, "schedule JSON text or file");
        if (with_ckpt) f.checkpoint = sub->add_option("--checkpoint", checkpoint, "model checkpoint");
        flags[name] = f;
        return sub;
    };
    add("train", "train the toy flow-matching model", true, false, false);
    add("sample", "scheduled Euler sampling from a checkpoint", true, true, true);
    CLI::App* red = add("redundancy", "attention redundancy along sampling steps", true, true, true);
    red->add_option("--dump-maps", dump_maps, "directory for per-head N x N attention maps");
    add("sweep", "threshold sweep with a cost/quality envelope", true, false, true);
    add("flops", "analytic attention MAC table", false, false, false);
    add("bench", "instrumented MAC and wall-clock scaling", false, false, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    const Flags& f = flags.at(cmd);
    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : parse_run_config(read_file(config_path), config_path);
        if (*f.seed) cfg.seed = seed;
        if (*f.out) cfg.out = out_dir;
        if (f.steps && *f.steps) {
            if (cmd == "train") {
                cfg.train.steps = steps;
            } else {
                if (steps < 1) throw ConfigError("--steps: sampler needs at least 1 step");
                cfg.sampler.steps = steps;
            }
        }
        if (f.schedule && *f.schedule) {
            const bool inline_json = schedule_arg.find('{') != std::string::npos;
            const json j = parse_json_text(inline_json ? schedule_arg : read_file(schedule_arg),
                                           inline_json ? "--schedule" : schedule_arg);
            cfg.schedule = schedule_from_json(j);
        }
        if (f.checkpoint && *f.checkpoint) {
            cfg.checkpoint = checkpoint;
            cfg.checkpoints.clear();
        }
        if (cfg.out.empty()) throw ConfigError("--out must not be empty");

        if (cmd == "train") return cmd_train(cfg, out);
        if (cmd == "sample") return cmd_sample(cfg, out);
        if (cmd == "redundancy") return cmd_redundancy(cfg, dump_maps, out);
        if (cmd == "sweep") return cmd_sweep(cfg, out, err);
        if (cmd == "flops") return cmd_flops(cfg, out);
        return cmd_bench(cfg, out);
    } catch (const NumericError& e) {
        err << "mtat " << cmd << ": numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error& e) {
        err << "mtat " << cmd << ": " << e.what() << "\n";
        return kUsage;
    } catch (const json::exception& e) {
        err << "mtat " << cmd << ": " << e.what() << "\n";
        return kUsage;
    } catch (const fs::filesystem_error& e) {
        err << "mtat " << cmd << ": " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "mtat " << cmd << ": internal error: " << e.what() << "\n";
        return kInternal;
    }
}

}  // namespace mtat::cli
