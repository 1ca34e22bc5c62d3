#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace riskgrad {

/**
 * Seeded random source used by every sampler in the library.
 *
 * Wraps std::mt19937_64. Streams derived with split() are a pure function of
 * (seed, stream id), so parallel workers can each own an independent
 * generator and reproduce the same draws regardless of scheduling.
 */
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : seed_(seed), engine_(mix(seed)) {}

    std::uint64_t seed() const { return seed_; }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    /// Index drawn from a probability vector whose entries sum to one.
    std::size_t categorical(std::span<const double> probabilities) {
        const double u = uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i < probabilities.size(); ++i) {
            acc += probabilities[i];
            if (u < acc) {
                return i;
            }
        }
        // Rounding left u above the accumulated mass; pick the last nonzero entry.
        for (std::size_t i = probabilities.size(); i-- > 0;) {
            if (probabilities[i] > 0.0) {
                return i;
            }
        }
        return probabilities.size() - 1;
    }

    /// Independent child stream.
    RandomSource split(std::uint64_t stream) const {
        return RandomSource(mix(seed_ ^ mix(stream + 0x632be59bd9b4e019ULL)));
    }

    static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        return mix(mix(seed ^ mix(a + 0x9e3779b97f4a7c15ULL)) ^ mix(b + 0xbf58476d1ce4e5b9ULL));
    }

private:
    // splitmix64 finalizer; decorrelates nearby seeds before they reach the engine.
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace riskgrad
