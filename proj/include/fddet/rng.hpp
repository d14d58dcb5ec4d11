#pragma once

// Deterministic random streams. Every consumer derives a substream from
// (seed, purpose tag, image id), so parallel schedules cannot change what
// any image draws. All samplers are implemented over raw 64-bit output to
// keep sequences identical across standard libraries; std::* distributions
// are deliberately not used.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "fddet/core.hpp"

namespace fddet {

namespace detail {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// xoshiro256** generator with SplitMix64 seeding.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) {
            word = detail::splitmix64_next(sm);
        }
    }

    /// Derives an independent substream from (seed, purpose, image_id).
    /// Identical inputs yield an identical draw sequence across runs.
    static RngStream derive(std::uint64_t seed, std::string_view purpose,
                            std::int64_t image_id = 0) {
        // FNV-1a over the purpose tag, folded with the seed and image id.
        std::uint64_t h = 0xCBF29CE484222325ULL ^ seed;
        for (const char c : purpose) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 0x100000001B3ULL;
        }
        h ^= static_cast<std::uint64_t>(image_id) + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
        return RngStream(h);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl64(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = detail::rotl64(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Unbiased uniform integer in [0, n). n must be positive.
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) {
            throw ValidationError("RngStream::bounded: n must be positive");
        }
        const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) {
                return r % n;
            }
        }
    }

    /// Standard normal variate (Marsaglia polar method).
    double gauss() {
        for (;;) {
            const double u = 2.0 * uniform() - 1.0;
            const double v = 2.0 * uniform() - 1.0;
            const double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) {
                return u * std::sqrt(-2.0 * std::log(s) / s);
            }
        }
    }

    /// Gamma(shape, 1) variate via Marsaglia-Tsang squeeze; the shape < 1
    /// case is boosted from shape + 1.
    double gamma(double shape) {
        if (!(shape > 0.0)) {
            throw ValidationError("gamma: shape must be positive");
        }
        if (shape < 1.0) {
            const double u = 1.0 - uniform();  // in (0, 1]
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = 0.0;
            double v = 0.0;
            do {
                x = gauss();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = 1.0 - uniform();  // in (0, 1], safe for log
            if (u < 1.0 - 0.0331 * (x * x) * (x * x)) {
                return d * v;
            }
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
                return d * v;
            }
        }
    }

    /// Beta(a, b) variate as X/(X+Y) with X~Gamma(a), Y~Gamma(b).
    double beta(double a, double b) {
        if (!(a > 0.0) || !(b > 0.0)) {
            throw ValidationError("beta: shape parameters must be positive");
        }
        for (;;) {
            const double x = gamma(a);
            const double y = gamma(b);
            if (x + y > 0.0) {
                return x / (x + y);
            }
        }
    }

private:
    std::array<std::uint64_t, 4> state_{};
};

}  // namespace fddet
