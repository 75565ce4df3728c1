#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include <boost/math/special_functions/erf.hpp>

namespace nexp {

/// Philox4x32-10 (Salmon et al. 2011). Stateless: a pure function of
/// (key, counter), which is what makes per-path streams independent of how
/// work is partitioned.
namespace philox {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline Counter round(Counter c, Key k) noexcept {
    constexpr std::uint64_t M0 = 0xD2511F53u;
    constexpr std::uint64_t M1 = 0xCD9E8D57u;
    const std::uint64_t p0 = M0 * c[0];
    const std::uint64_t p1 = M1 * c[2];
    return {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
            static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
}

inline Counter generate(Counter c, Key k) noexcept {
    constexpr std::uint32_t W0 = 0x9E3779B9u;
    constexpr std::uint32_t W1 = 0xBB67AE85u;
    for (int r = 0; r < 10; ++r) {
        c = round(c, k);
        k[0] += W0;
        k[1] += W1;
    }
    return c;
}

}  // namespace philox

inline std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001B3ull;
    }
    return h;
}

/// Derive a child seed for a named purpose. All randomness in a run flows
/// from one seed through this.
inline std::uint64_t split_seed(std::uint64_t seed, std::string_view purpose) noexcept {
    return mix64(seed ^ mix64(fnv1a(purpose)));
}

inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    return mix64(seed ^ mix64(index + 0x632BE59BD9B4E019ull));
}

/// Uniform in the open interval (0,1), 53-bit resolution.
inline double bits_to_open_unit(std::uint64_t bits) noexcept {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double normal_quantile(double u) {
    // erfc_inv keeps full relative accuracy in both tails
    return -1.4142135623730950488 * boost::math::erfc_inv(2.0 * u);
}

/// Counter-addressed random stream: draw (a, b, c) returns the same value for
/// the same seed no matter the order of calls.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    /// Two independent 53-bit uniforms for one counter position.
    std::array<double, 2> uniform_pair(std::uint64_t a, std::uint32_t b, std::uint32_t c) const noexcept {
        const philox::Counter out = philox::generate(
            {static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), b, c}, key_);
        const std::uint64_t u0 = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
        const std::uint64_t u1 = (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
        return {bits_to_open_unit(u0), bits_to_open_unit(u1)};
    }

    double uniform(std::uint64_t a, std::uint32_t b, std::uint32_t c) const noexcept {
        return uniform_pair(a, b, c / 2)[c % 2];
    }

    double normal(std::uint64_t a, std::uint32_t b, std::uint32_t c) const {
        return normal_quantile(uniform(a, b, c));
    }

private:
    philox::Key key_;
};

/// Sequential convenience wrapper over a CounterRng for places that just need
/// "the next number" (net initialization, sampling test points).
class SeqRng {
public:
    explicit SeqRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept : rng_(seed), stream_(stream) {}

    double uniform() noexcept {
        const std::uint64_t n = n_++;
        return rng_.uniform(stream_, static_cast<std::uint32_t>(n >> 32), static_cast<std::uint32_t>(n));
    }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() { return normal_quantile(uniform()); }

private:
    CounterRng rng_;
    std::uint64_t stream_;
    std::uint64_t n_ = 0;
};

}  // namespace nexp
