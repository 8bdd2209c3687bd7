#include "smallobj/rng.hpp"

namespace smallobj {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
    inc_ = (splitmix64(stream ^ 0xda3e39cb94b95bdbULL) << 1u) | 1u;
    state_ = 0u;
    next_u32();
    state_ += splitmix64(seed);
    next_u32();
}

std::uint32_t Rng::next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

std::uint64_t Rng::next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

int Rng::uniform_int(int lo, int hi) {
    std::uint32_t span = static_cast<std::uint32_t>(hi - lo) + 1u;
    if (span == 0) return lo + static_cast<int>(next_u32());  // full range
    std::uint32_t threshold = (0u - span) % span;
    for (;;) {
        std::uint32_t r = next_u32();
        if (r >= threshold) return lo + static_cast<int>(r % span);
    }
}

}  // namespace smallobj
