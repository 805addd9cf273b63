#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dim {

// Seeded generator with portable distributions. std::mt19937_64 output is
// fixed by the standard, but the std:: distributions are not, so the
// transforms below are spelled out to keep every stream identical across
// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n);

    // Standard normal (Box-Muller; second variate cached).
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64 finalizer; mixes a base seed with stream identifiers so that
// sub-streams (per epoch, per sample, per role) are decorrelated.
std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> streams);

}  // namespace dim
