#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace etmapg {

// Purposes for derived random streams. Values are part of the determinism
// contract: changing them changes every emitted byte.
enum class StreamPurpose : std::uint64_t {
  kInit = 1,
  kEnvironment = 2,
  kPolicySampling = 3,
  kMinibatch = 4,
  kEvaluation = 5,
};

// Counter-based seed derivation: the stream for (seed, slot, purpose) does not
// depend on how many other streams exist or the order they are drawn from.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t slot, StreamPurpose purpose);

// Seeded stream with portable draws (no std:: distributions, whose output is
// implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t slot, StreamPurpose purpose)
      : engine_(derive_seed(seed, slot, purpose)) {}

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  // Index drawn with probability proportional to probs[i].
  std::size_t categorical(std::span<const double> probs);

 private:
  std::mt19937_64 engine_;
};

}  // namespace etmapg
