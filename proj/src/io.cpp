// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtat/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mtat/errors.hpp"

namespace mtat::io {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

namespace {

constexpr std::array<char, 4> kTensorMagic{'M', 'T', 'A', 'T'};
constexpr std::array<char, 4> kCheckpointMagic{'M', 'T', 'C', 'K'};
constexpr std::uint32_t kMaxRank = 16;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error(std::string("truncated container: ") + what);
    return v;
}

void expect_magic(std::istream& is, const std::array<char, 4>& magic) {
    std::array<char, 4> got{};
    if (!is.read(got.data(), 4) || got != magic) {
        throw Error("bad magic: expected \"" + std::string(magic.data(), 4) + "\"");
    }
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write(kTensorMagic.data(), 4);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
    expect_magic(is, kTensorMagic);
    const auto rank = get<std::uint32_t>(is, "rank");
    if (rank > kMaxRank) throw Error("tensor container: rank " + std::to_string(rank) + " too large");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(is, "extent"));
    std::vector<double> data(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
        throw Error("truncated container: tensor data");
    }
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ostringstream os(std::ios::binary);
    write_tensor(os, t);
    write_text_atomic(path, os.str());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path.string());
    return read_tensor(is);
}

nlohmann::json to_json(const Tensor& t) {
    return nlohmann::json{{"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
    std::ostringstream os(std::ios::binary);
    os.write(kCheckpointMagic.data(), 4);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor(os, t);
    }
    write_text_atomic(path, os.str());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path.string());
    expect_magic(is, kCheckpointMagic);
    const auto count = get<std::uint32_t>(is, "entry count");
    NamedTensors out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(is, "name length");
        if (len > 4096) throw Error("checkpoint: implausible name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw Error("truncated container: name");
        out.emplace(std::move(name), read_tensor(is));
    }
    return out;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot write " + tmp.string());
        os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!os) throw Error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

}  // namespace mtat::io
