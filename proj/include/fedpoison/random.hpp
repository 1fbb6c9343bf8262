#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace fedpoison {

/// Purposes for derived RNG streams. Every consumer of randomness gets its own
/// purpose tag so that no two consumers ever share a stream.
enum class StreamPurpose : std::uint64_t {
    init_weights = 1,
    dataset_train = 2,
    dataset_heldout = 3,
    subsample = 4,
    sharding = 5,
    aux_pick = 6,
    agent_selection = 7,
    batch_order = 8,
    poison_noise = 9,
    validation_split = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// hash(master, agent, round, purpose, extra). Stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t agent, std::uint64_t round,
                                 StreamPurpose purpose, std::uint64_t extra = 0) noexcept {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ agent);
    h = splitmix64(h ^ (round + 0x632be59bd9b4e019ULL));
    h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
    h = splitmix64(h ^ extra);
    return h;
}

/// Thin wrapper over mt19937_64. The distributions are written out here
/// because the std:: distribution algorithms are implementation-defined and
/// would break cross-toolchain reproducibility.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % bound;
    }

    /// Standard normal via Box-Muller (one value per call, no caching).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <class T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace fedpoison
