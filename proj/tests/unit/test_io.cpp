// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "mtat/errors.hpp"
#include "mtat/io.hpp"
#include "mtat/util.hpp"

using namespace mtat;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::current_path() / "io_scratch";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("binary container layout: magic, u32 rank, u64 extents, f64 payload") {
    const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    std::ostringstream os(std::ios::binary);
    io::write_tensor(os, t);
    const std::string bytes = os.str();
    REQUIRE(bytes.size() == 4 + 4 + 2 * 8 + 6 * 8);
    CHECK(bytes.substr(0, 4) == "MTAT");
    std::uint32_t rank = 0;
    std::memcpy(&rank, bytes.data() + 4, 4);
    CHECK(rank == 2);
    std::uint64_t e1 = 0;
    std::memcpy(&e1, bytes.data() + 16, 8);
    CHECK(e1 == 3);
    double last = 0;
    std::memcpy(&last, bytes.data() + bytes.size() - 8, 8);
    CHECK(last == 6.0);
}

TEST_CASE("tensor files round-trip bit-exactly") {
    std::mt19937_64 rng(1);
    const Tensor t = Tensor::randn({3, 4, 2}, rng);
    io::save_tensor(scratch("t.mtat"), t);
    CHECK(io::load_tensor(scratch("t.mtat")) == t);
    CHECK_FALSE(fs::exists(scratch("t.mtat.tmp")));

    const Tensor empty({0, 5});
    io::save_tensor(scratch("e.mtat"), empty);
    CHECK(io::load_tensor(scratch("e.mtat")) == empty);
}

TEST_CASE("corrupt or truncated containers are rejected") {
    std::istringstream bad(std::string("NOPE\0\0\0\0", 8));
    CHECK_THROWS_AS(io::read_tensor(bad), Error);

    std::ostringstream os(std::ios::binary);
    io::write_tensor(os, Tensor({4}, {1, 2, 3, 4}));
    std::string cut = os.str();
    cut.resize(cut.size() - 3);
    std::istringstream truncated(cut);
    CHECK_THROWS_AS(io::read_tensor(truncated), Error);

    CHECK_THROWS_AS(io::load_tensor(scratch("does-not-exist.mtat")), Error);
}

TEST_CASE("JSON text form round-trips") {
    const Tensor t({2, 2}, {0.1, -2.5, 3e-300, 7});
    const auto j = io::to_json(t);
    CHECK(j.at("shape") == nlohmann::json::array({2, 2}));
    CHECK(io::tensor_from_json(nlohmann::json::parse(j.dump())) == t);
    CHECK_THROWS_AS(io::tensor_from_json(nlohmann::json{{"shape", {3}}, {"data", {1, 2}}}), DimensionError);
}

TEST_CASE("checkpoints keep every named tensor") {
    std::mt19937_64 rng(2);
    io::NamedTensors ck{{"a.w", Tensor::randn({2, 3}, rng)}, {"b", Tensor::randn({5}, rng)}, {"scalar", Tensor::scalar(4)}};
    io::save_checkpoint(scratch("m.ckpt"), ck);
    CHECK(io::load_checkpoint(scratch("m.ckpt")) == ck);

    std::ofstream(scratch("junk.ckpt")) << "MTAT junk";
    CHECK_THROWS_AS(io::load_checkpoint(scratch("junk.ckpt")), Error);
}

TEST_CASE("number formatting is shortest round-trip and locale free") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 6.02214076e23, 123456789.0}) {
        const std::string s = io::format_double(v);
        CHECK(s.find(',') == std::string::npos);
        CHECK(std::stod(s) == v);
    }
    CHECK(io::format_double(0.5) == "0.5");
    CHECK(io::format_double(2.0) == "2");
}

TEST_CASE("seed derivation separates named streams and indices") {
    std::set<std::uint64_t> seen;
    for (const char* name : {"data", "init", "sampling", "sweep"}) {
        seen.insert(derive_seed(42, name));
        for (std::uint64_t i = 0; i < 8; ++i) seen.insert(derive_seed(42, name, i));
    }
    CHECK(seen.size() == 4 * 9);
    CHECK(derive_seed(42, "data") == derive_seed(42, "data"));
    CHECK(derive_seed(42, "data") != derive_seed(43, "data"));
}

TEST_CASE("parallel_for covers every index once and rethrows worker errors") {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; }, 4);
    for (int h : hits) CHECK(h == 1);
    CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) { if (i == 7) throw NumericError("boom"); }, 3), NumericError);
}

}  // TEST_SUITE
