#pragma once

#include <cstdint>
#include <initializer_list>

namespace volray {

/// Small deterministic RNG (splitmix64 core). Unlike the <random>
/// distributions, every draw here is bit-identical across standard
/// libraries, which keeps seeded outputs byte-reproducible.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    /// Independent stream derived from a seed and a path of stream ids,
    /// e.g. derive(seed, {iteration, ray_index}). Used so that per-ray and
    /// per-iteration randomness does not depend on thread scheduling.
    static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
        std::uint64_t s = mix(seed ^ 0x9e3779b97f4a7c15ULL);
        for (std::uint64_t p : path) s = mix(s ^ mix(p + 0xbf58476d1ce4e5b9ULL));
        return Rng(s);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

}  // namespace volray
