#pragma once

#include <cstdint>
#include <random>

namespace gtn {

/// Seeded random source. Every random draw in the library goes through this
/// wrapper so that a fixed seed reproduces byte-identical results; the raw
/// 64-bit stream is mapped to doubles/indices here instead of relying on
/// std::distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform index in [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

} // namespace gtn
