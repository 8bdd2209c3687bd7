#pragma once

#include <cstdint>

namespace smallobj {

// PCG-XSH-RR 32-bit generator (O'Neill, pcg-random.org). Pure integer
// recurrence, so a given (seed, stream) pair produces the same sequence on
// every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    // Uniform in [0,1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);

    // Inclusive bounds, bias-free rejection sampling.
    int uniform_int(int lo, int hi);

private:
    std::uint64_t state_;
    std::uint64_t inc_;
};

// SplitMix64 step, used to spread seeds into independent streams.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace smallobj
