// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>

namespace mtat {

std::uint64_t splitmix64(std::uint64_t x);

/// Named sub-stream seed, e.g. derive_seed(seed, "init").
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index);

/// Worker cap from MTAT_THREADS (default: hardware concurrency, at least 1).
std::size_t thread_budget();

/// Runs fn(i) for i in [0, n). Each index is executed exactly once; callers
/// write results into per-index slots so output is independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t max_threads = 0);

}  // namespace mtat
