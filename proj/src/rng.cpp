// SPDX-License-Identifier: Apache-2.0
#include "effortvae/rng.hpp"

#include <cmath>
#include <numbers>

namespace effortvae {

std::uint64_t RngStream::mix(std::uint64_t seed, std::uint64_t n) noexcept {
    // splitmix64 finalizer over a (seed, counter) combination
    std::uint64_t z = seed * 0xbf58476d1ce4e5b9ULL + (n + 1) * 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t r;
    do {
        r = next_u64();
    } while (r >= limit);
    return r % n;
}

double RngStream::normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace effortvae
