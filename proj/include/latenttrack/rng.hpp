#pragma once

// Deterministic random number generation. Everything downstream (init,
// reparameterization noise, dropout masks, synthetic streams) derives a
// fresh generator from (seed, stream id, step, draw index), so results are
// bit-reproducible and independent of evaluation order.

#include <cmath>
#include <cstdint>
#include <vector>

namespace lt {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0xa5a5a5a5deadbeefULL)) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; one draw per call, partner discarded to keep draws
    // independent of call pairing.
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    std::vector<double> normal_vec(int n) {
        std::vector<double> v(static_cast<std::size_t>(n));
        for (auto& e : v) e = normal();
        return v;
    }

  private:
    std::uint64_t state_;
};

// Stream ids used for key derivation; values are arbitrary but frozen.
enum class RngStream : std::uint64_t {
    init = 1,
    train_noise = 2,
    eval_noise = 3,
    dropout = 4,
    synth = 5,
    state_update = 6,
};

inline Rng derive_rng(std::uint64_t seed, RngStream stream, std::uint64_t a = 0,
                      std::uint64_t b = 0) {
    std::uint64_t k = splitmix64(seed);
    k = splitmix64(k ^ (static_cast<std::uint64_t>(stream) * 0x9e3779b97f4a7c15ULL));
    k = splitmix64(k ^ (a * 0xc2b2ae3d27d4eb4fULL));
    k = splitmix64(k ^ (b * 0x165667b19e3779f9ULL));
    return Rng(k);
}

}  // namespace lt
