#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace psagan {

// Deterministic 64-bit PRNG (splitmix64 state transition). Streams are split by
// tag so that independent components (init, data sampling, noise, scenarios)
// draw from unrelated sequences derived from one master seed.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    // Child stream keyed by tag; pure function of (parent seed, tag).
    Rng split(std::string_view tag) const;
    Rng split(std::string_view tag, std::uint64_t index) const;

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double next_double();
    // Uniform in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    float uniform(float lo, float hi);
    // Standard normal via Box-Muller (one value per call).
    float normal();

    std::uint64_t state() const { return state_; }

  private:
    std::uint64_t state_;
};

std::vector<float> normal_vector(Rng& rng, std::size_t n);
std::vector<float> uniform_vector(Rng& rng, std::size_t n, float lo, float hi);

// FNV-1a 64-bit hash; used for stream splitting and file content hashes.
std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace psagan
