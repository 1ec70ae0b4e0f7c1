// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <cstddef>

namespace effortvae {

/// Counter-based random stream. Draw `n` is a pure function of (seed, n), so the
/// whole state is two integers and a stream can be persisted and resumed exactly.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept { return mix(seed_, counter_++); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t n) noexcept;

    /// Standard normal via Box-Muller; consumes exactly two draws.
    double normal() noexcept;

    /// Independent child stream, keyed by `stream_id`.
    RngStream fork(std::uint64_t stream_id) const noexcept {
        return RngStream(mix(seed_ ^ 0x9e3779b97f4a7c15ULL, stream_id), 0);
    }

    // UniformRandomBitGenerator surface, for std algorithms.
    using result_type = std::uint64_t;
    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }
    result_type operator()() noexcept { return next_u64(); }

private:
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t n) noexcept;

    std::uint64_t seed_;
    std::uint64_t counter_;
};

/// Fisher-Yates shuffle driven by RngStream (std::shuffle's draw order is unspecified).
template <class RandomIt>
void shuffle(RandomIt first, RandomIt last, RngStream& rng) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = rng.below(i);
        using std::swap;
        swap(first[i - 1], first[j]);
    }
}

}  // namespace effortvae
