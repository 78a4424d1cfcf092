#pragma once

#include <cmath>
#include <cstdint>

namespace rsf {

// splitmix64 finalizer. Used both as the generator step and for seed mixing.
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Counter-based generator: draw i of a stream seeded with s is
// mix64(s + (i+1) * golden_gamma). No global state; every stochastic
// operation in the library takes an explicit 64-bit seed. Streams for
// sub-tasks are forked by hashing (seed, stream index), so parallel
// consumers stay deterministic regardless of scheduling.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    // Uniform on [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without a cached spare so the state stays a pure counter.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        // 1-u1 in (0,1] avoids log(0).
        return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Uniform integer in [0, n). Multiply-shift; bias is O(n / 2^64).
    uint64_t uniform_index(uint64_t n) {
        return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Independent stream derived from this generator's seed and a stream id.
    Rng fork(uint64_t stream) const { return Rng(mix64(state_ ^ mix64(stream + 0x633d5e593e9e9a4bULL))); }

  private:
    uint64_t state_;
};

// Seed for the i-th independent sub-task of a top-level seed.
inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
    return mix64(mix64(seed + 0x9e3779b97f4a7c15ULL) ^ (index + 0x2545f4914f6cdd1dULL));
}

} // namespace rsf
