// SPDX-License-Identifier: Apache-2.0
//
// Counter-based random streams. Every draw is a pure function of
// (stream seed, counter), so any stream can be replayed or checkpointed by
// storing two 64-bit words. Streams are derived from a root seed plus a
// label, which keeps data/init/gate randomness isolated from each other.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace dld {

// SplitMix64 output function (Steele, Lea, Flood 2014).
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class RngStream {
public:
    RngStream() = default;
    explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }
    void set_counter(std::uint64_t c) { counter_ = c; }

    std::uint64_t next_u64() { return mix64(seed_ + 0x9E3779B97F4A7C15ULL * ++counter_); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; consumes exactly two draws per call.
    double next_normal();

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t next_int(std::int64_t lo, std::int64_t hi);

    // Returns 1 with probability p. Requires 0 <= p <= 1.
    int next_bernoulli(double p);

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

// Derives an independent stream from a root seed, a label, and an index.
RngStream make_stream(std::uint64_t root_seed, std::string_view label, std::uint64_t index = 0);

}  // namespace dld
