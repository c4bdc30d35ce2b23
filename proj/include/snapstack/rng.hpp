#pragma once

#include <cstdint>
#include <vector>

namespace snapstack {

// xoshiro256++ seeded through splitmix64. The generator is spelled out here
// (not delegated to <random> distributions, whose output is not pinned by the
// standard) so that a seed plus a call sequence yields the same stream on
// every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // [0, 1) with 53-bit resolution.
    double uniform01();
    double uniform(double lo, double hi);

    // Box-Muller; the spare variate is cached, so normal() consumes two
    // uniforms on every other call.
    double normal(double mu, double sigma);

    // Unbiased integer in [0, n), n >= 1. Rejection sampling.
    std::uint64_t below(std::uint64_t n);

    // Independent child stream; does not disturb this generator's state.
    Rng fork(std::uint64_t stream) const;

    std::uint64_t seed() const { return seed_; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t state_[4] = {};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// One step of the splitmix64 sequence; also used for seed derivation.
std::uint64_t splitmix64(std::uint64_t& state);

// Order-sensitive combination of two 64-bit values into a new seed.
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);

}  // namespace snapstack
