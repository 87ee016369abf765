// SPDX-License-Identifier: Apache-2.0
#include "dld/rng.hpp"

#include <cmath>

#include "dld/errors.hpp"

namespace dld {

double RngStream::next_normal() {
    // 1 - u keeps the log argument in (0, 1].
    const double u = 1.0 - next_unit();
    const double theta = 6.283185307179586476925286766559 * next_unit();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(theta);
}

std::int64_t RngStream::next_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw ContractError("next_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
}

int RngStream::next_bernoulli(double p) {
    if (!(p >= 0.0 && p <= 1.0))
        throw ContractError("bernoulli: p must lie in [0,1], got " + std::to_string(p));
    return next_unit() < p ? 1 : 0;
}

namespace {
std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}
}  // namespace

RngStream make_stream(std::uint64_t root_seed, std::string_view label, std::uint64_t index) {
    const std::uint64_t h = mix64(fnv1a64(label) ^ mix64(index));
    return RngStream(mix64(root_seed ^ h));
}

}  // namespace dld
