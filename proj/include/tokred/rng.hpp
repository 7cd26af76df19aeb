#pragma once

#include <cstdint>

namespace tokred {

// Deterministic 64-bit generator (splitmix64 core). Every stochastic
// operation in the library takes an explicit seed; identical seed and
// inputs give bit-identical output, which std:: distributions do not
// guarantee across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in (0, 1); safe as a log argument
    double uniform_pos() { return (double(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    // standard normal via Box-Muller
    double normal();

    // unbiased integer in [0, n)
    std::uint64_t below(std::uint64_t n);

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stable seed derivation for per-sample / per-role streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

} // namespace tokred
