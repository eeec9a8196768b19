// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace mtat {

/// Labeled sub-steps of an attention layer that carry multiply-accumulates.
enum class MacBucket : std::size_t {
    QkvProj = 0,
    ScoresQK,   // q·kᵀ (vanilla) or t·kᵀ (mediator)
    AggregateV, // A·v (vanilla) or A_tk·v (mediator)
    ScoresQT,   // q·tᵀ
    AggregateQT,// A_qt·v_med
    Pooling,
    DwConv,
    OutProj,
    Count_
};

inline constexpr std::size_t kMacBuckets = static_cast<std::size_t>(MacBucket::Count_);

std::string_view bucket_name(MacBucket b);

/// Per-invocation MAC accumulator. Passed explicitly; never global.
class OpCounter {
public:
    void add(MacBucket b, std::uint64_t macs) noexcept { counts_[static_cast<std::size_t>(b)] += macs; }
    std::uint64_t get(MacBucket b) const noexcept { return counts_[static_cast<std::size_t>(b)]; }
    void merge(const OpCounter& other) noexcept {
        for (std::size_t i = 0; i < kMacBuckets; ++i) counts_[i] += other.counts_[i];
    }
    const std::array<std::uint64_t, kMacBuckets>& counts() const noexcept { return counts_; }

private:
    std::array<std::uint64_t, kMacBuckets> counts_{};
};

/// Where an instrumented op should book its MACs. A null counter disables counting.
struct MacTag {
    OpCounter* counter = nullptr;
    MacBucket bucket = MacBucket::QkvProj;

    void add(std::uint64_t macs) const noexcept {
        if (counter) counter->add(bucket, macs);
    }
};

inline MacTag tag(OpCounter* counter, MacBucket bucket) { return MacTag{counter, bucket}; }

}  // namespace mtat
