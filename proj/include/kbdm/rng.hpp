#pragma once

#include <cmath>
#include <cstdint>

namespace kbdm {

// Counter-based generator built on the splitmix64 finalizer: draw i of stream
// (seed) is mix(seed + i * golden). State is just (seed, counter), so identical
// (seed, counter) pairs reproduce the sequence bit-exactly, and independent
// streams can be derived with split() without sharing state.
struct Rng {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    Rng() = default;
    explicit Rng(std::uint64_t s) : seed(s) {}

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        ++counter;
        return mix(seed + counter * 0x9e3779b97f4a7c15ull);
    }

    // Independent stream keyed by (seed, stream_id), counter reset to zero.
    Rng split(std::uint64_t stream_id) const {
        return Rng(mix(seed ^ mix(stream_id + 0x632be59bd9b4e019ull)));
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer in [0, n). Multiply-shift keeps it branch-free and
    // deterministic; the bias at n << 2^64 is irrelevant here.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller. No cached spare: every call consumes
    // exactly two draws, so the output is a pure function of (seed, counter).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }
};

}  // namespace kbdm
