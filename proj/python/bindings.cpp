// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mtat/attention.hpp"
#include "mtat/cli.hpp"
#include "mtat/diffusion.hpp"
#include "mtat/errors.hpp"
#include "mtat/io.hpp"
#include "mtat/ops.hpp"
#include "mtat/redundancy.hpp"
#include "mtat/scheduler.hpp"

namespace py = pybind11;
using namespace mtat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor from_numpy(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::dict flops_dict(const FlopsReport& r) {
    py::dict d;
    d["qkv_proj"] = r.qkv_proj;
    d["scores_qk"] = r.scores_qk;
    d["aggregate_v"] = r.aggregate_v;
    d["scores_qt"] = r.scores_qt;
    d["aggregate_qt"] = r.aggregate_qt;
    d["pooling"] = r.pooling;
    d["dwconv"] = r.dwconv;
    d["out_proj"] = r.out_proj;
    d["interaction"] = r.interaction();
    d["total_macs"] = r.total_macs();
    d["total_flops"] = r.total_flops();
    return d;
}

AttentionConfig layer(std::size_t height, std::size_t width, std::size_t hidden, std::size_t heads) {
    return AttentionConfig::grid(height, width, hidden, heads);
}

}  // namespace

PYBIND11_MODULE(_mtat, m) {
    m.doc() = "Mediator-token attention, redundancy metrics and mediator schedules.";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<UsageError>(m, "UsageError", PyExc_RuntimeError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def("softmax_rows", [](const Array& a) { return to_numpy(ops::softmax_rows(from_numpy(a))); });

    m.def(
        "vanilla_attention_head",
        [](const Array& q, const Array& k, const Array& v) {
            const HeadResult r = vanilla_attention_head(from_numpy(q), from_numpy(k), from_numpy(v));
            return py::make_tuple(to_numpy(r.out.value()), to_numpy(r.attn.value()));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), "Returns (output, attention map).");

    m.def(
        "mediator_attention_head",
        [](const Array& q, const Array& k, const Array& v, const Array& t) {
            const MediatorHeadResult r =
                mediator_attention_head(from_numpy(q), from_numpy(k), from_numpy(v), from_numpy(t));
            return py::make_tuple(to_numpy(r.out.value()), to_numpy(r.attn_qt.value()), to_numpy(r.attn_tk.value()));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("t"), "Returns (output, A_qt, A_tk).");

    m.def(
        "make_mediators",
        [](const Array& q, std::size_t height, std::size_t width, std::size_t h, std::size_t w) {
            const Tensor qt = from_numpy(q);
            if (qt.rank() != 2) throw DimensionError("make_mediators: q must be 2-D");
            return to_numpy(make_mediators(qt, layer(height, width, qt.cols(), 1), MediatorConfig{h, w}).value());
        },
        py::arg("q"), py::arg("height"), py::arg("width"), py::arg("h"), py::arg("w"));

    m.def(
        "mediator_grid_for",
        [](std::size_t n, std::size_t height, std::size_t width) {
            const MediatorConfig g = mediator_grid_for(n, layer(height, width, 1, 1));
            return py::make_tuple(g.h, g.w);
        },
        py::arg("n"), py::arg("height"), py::arg("width"));

    m.def(
        "attention_flops",
        [](std::size_t height, std::size_t width, std::size_t hidden, std::size_t heads) {
            return flops_dict(attention_flops(layer(height, width, hidden, heads)));
        },
        py::arg("height"), py::arg("width"), py::arg("hidden"), py::arg("heads") = 1);

    m.def(
        "mediator_flops",
        [](std::size_t height, std::size_t width, std::size_t hidden, std::size_t heads, std::size_t n) {
            const AttentionConfig cfg = layer(height, width, hidden, heads);
            return flops_dict(mediator_flops(cfg, mediator_grid_for(n, cfg)));
        },
        py::arg("height"), py::arg("width"), py::arg("hidden"), py::arg("heads"), py::arg("n"));

    m.def(
        "kl_divergence",
        [](const std::vector<double>& p, const std::vector<double>& q) { return kl_divergence(p, q); },
        py::arg("p"), py::arg("q"));
    m.def(
        "js_divergence",
        [](const std::vector<double>& p, const std::vector<double>& q) { return js_divergence(p, q); },
        py::arg("p"), py::arg("q"));

    m.def(
        "redundancy_score",
        [](const std::vector<Array>& heads, std::uint64_t pair_cap, std::uint64_t seed) {
            std::vector<Tensor> maps;
            for (const auto& h : heads) maps.push_back(from_numpy(h));
            return redundancy_score(maps, RedundancyOptions{pair_cap, seed});
        },
        py::arg("heads"), py::arg("pair_cap") = 0, py::arg("seed") = 0);

    m.def(
        "latent_distance",
        [](const Array& a, const Array& b, const std::string& metric) {
            return latent_distance(from_numpy(a), from_numpy(b), parse_metric(metric));
        },
        py::arg("a"), py::arg("b"), py::arg("metric") = "l1");

    m.def(
        "schedule_counts",
        [](const std::vector<double>& deltas, const std::string& schedule_json) {
            const MediatorSchedule s = schedule_from_json(nlohmann::json::parse(schedule_json));
            if (deltas.empty()) return std::vector<std::size_t>{};
            SchedulerState state;
            std::vector<std::size_t> out;
            for (double d : deltas) out.push_back(select_mediator_count(d, deltas.front(), state, s));
            return out;
        },
        py::arg("deltas"), py::arg("schedule_json"),
        "Count selected after each observed difference; deltas[0] is the initial difference.");

    m.def(
        "pareto_envelope",
        [](const std::vector<std::pair<double, double>>& points) {
            std::vector<EnvelopePoint> pts;
            for (std::size_t i = 0; i < points.size(); ++i) pts.push_back({points[i].first, points[i].second, i});
            std::vector<std::size_t> ids;
            for (const auto& p : pareto_envelope(pts)) ids.push_back(p.id);
            return ids;
        },
        py::arg("points"), "Indices of the non-dominated (cost, score) points, sorted by cost.");

    m.def(
        "fid_proxy",
        [](const std::vector<Array>& a, const std::vector<Array>& b, std::uint64_t seed, std::size_t max_dims) {
            std::vector<Tensor> ta, tb;
            for (const auto& x : a) ta.push_back(from_numpy(x));
            for (const auto& x : b) tb.push_back(from_numpy(x));
            return diffusion::fid_proxy(ta, tb, seed, max_dims);
        },
        py::arg("generated"), py::arg("reference"), py::arg("projection_seed") = 0, py::arg("max_dims") = 64);

    m.def(
        "load_tensor", [](const std::string& path) { return to_numpy(io::load_tensor(path)); }, py::arg("path"));
    m.def(
        "save_tensor", [](const std::string& path, const Array& a) { io::save_tensor(path, from_numpy(a)); },
        py::arg("path"), py::arg("array"));

    m.def(
        "cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"mtat"};
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a CLI command in-process; returns (exit code, stdout, stderr).");
}
