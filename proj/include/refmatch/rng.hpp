#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace refmatch {

/// Deterministic splittable RNG. Every stream is derived from the master
/// seed by pure mixing, so per-seed work units can be fanned out in any
/// order and still see identical numbers. All distributions are implemented
/// here rather than via <random> so traces are stable across platforms and
/// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    /// Child generator for an independent stream. Depends only on the
    /// identity of this generator and the stream index, never on how many
    /// numbers have been drawn.
    Rng split(std::uint64_t stream) const {
        return Rng(mix(seed_ ^ mix(stream ^ 0x9E3779B97F4A7C15ull)));
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Box-Muller; draws exactly two uniforms per call.
    double normal() {
        double u1 = 1.0 - uniform01();  // (0, 1]
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) {
        return mean + stddev * normal();
    }

    /// Uniform integer in [lo, hi], inclusive.
    int uniform_int(int lo, int hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_u64() % i);
            std::swap(items[i - 1], items[j]);
        }
    }

    std::uint64_t seed() const { return seed_; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t seed_;   // stream identity, immutable
    std::uint64_t state_;  // draw cursor
};

}  // namespace refmatch
