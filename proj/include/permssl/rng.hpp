#pragma once

#include <cmath>
#include <cstdint>

namespace permssl {

// Counter-free splitmix64 step. Used both as a stream generator and as a
// mixing function when deriving child seeds.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derives an independent child seed from a base seed and up to three stream
// identifiers. All randomness in the project flows through this so that any
// draw is a pure function of (seed, stream ids).
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = base;
    uint64_t h = splitmix64(s);
    s ^= a * 0x9e3779b97f4a7c15ull;
    h ^= splitmix64(s);
    s ^= b * 0xc2b2ae3d27d4eb4full;
    h ^= splitmix64(s);
    s ^= c * 0x165667b19e3779f9ull;
    h ^= splitmix64(s);
    return h;
}

// Small self-contained generator. Not std::mt19937 on purpose: outputs must
// be bit-identical across compilers and standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1) with 53 bits of precision.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, bound). Rejection sampling, unbiased.
    uint64_t next_below(uint64_t bound) {
        const uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Standard normal via Box-Muller. Consumes two draws per value; the sine
    // branch is discarded to keep the consumption pattern position-independent.
    double next_gaussian() {
        // u1 in (0, 1] so the log is finite.
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

private:
    uint64_t state_;
};

// Stream tags so unrelated consumers of the same run seed never collide.
namespace stream {
constexpr uint64_t permutation = 0x7065726d; // "perm"
constexpr uint64_t noise = 0x6e6f6973;       // "nois"
constexpr uint64_t order = 0x6f726472;       // "ordr"
constexpr uint64_t validation = 0x76616c64;  // "vald"
constexpr uint64_t init = 0x696e6974;        // "init"
constexpr uint64_t fixed_set = 0x66736574;   // "fset"
constexpr uint64_t data = 0x64617461;        // "data"
constexpr uint64_t probe = 0x70726f62;       // "prob"
constexpr uint64_t instrument = 0x696e7374;  // "inst"
} // namespace stream

} // namespace permssl
