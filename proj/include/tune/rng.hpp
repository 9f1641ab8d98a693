#pragma once

#include <cmath>
#include <cstdint>

namespace tune {

/// SplitMix64 finalizer (Steele, Lea & Flood, 2014). Also used to derive
/// independent stream seeds, which keeps every random decision a pure
/// function of (seed, stream tag, counter) and platform-independent.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0) {
    return mix64(seed ^ mix64(stream ^ mix64(counter)));
}

/// SplitMix64 generator. 64-bit state, one mix per draw; sequences are
/// identical on every platform and cheap to fork via derive_seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::size_t uniform_index(std::size_t n) {
        std::size_t i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return i < n ? i : n - 1;
    }

    /// Standard normal via Box-Muller (no caching, so the number of u64
    /// draws per call is fixed at two).
    double normal() {
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Normal truncated at +-nsig standard deviations (rejection).
    double normal_trunc(double nsig) {
        for (;;) {
            double z = normal();
            if (std::abs(z) <= nsig) return z;
        }
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    std::uint64_t state_;
};

// Stream tags for derive_seed. Every consumer of randomness inside a trial
// draws from its own (seed, tag, counter) stream so that replaying a log
// prefix reproduces the next proposal without tracking generator state.
namespace stream {
inline constexpr std::uint64_t kLhs = 0x11;
inline constexpr std::uint64_t kEval = 0x22;
inline constexpr std::uint64_t kRefRepeat = 0x33;
inline constexpr std::uint64_t kPropose = 0x44;
inline constexpr std::uint64_t kFit = 0x55;
inline constexpr std::uint64_t kEmbed = 0x66;
inline constexpr std::uint64_t kMethod = 0x77;
} // namespace stream

} // namespace tune
