#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vetcode {

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

// splitmix64 finalizer; used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x);

// Seed of an isolated stream: mix64(seed ^ fnv1a64(stream_name)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream_name);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t counter);

// General-purpose generator. The engine is std::mt19937_64 (fully specified
// by the standard); conversions to doubles and bounded integers are done here
// rather than through std distributions so that streams are identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); n > 0. Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Linear congruential generator with the Knuth MMIX constants. Tie-breaking
// in the splitter is defined in terms of this generator so that split plans
// are reproducible from the seed alone.
class Lcg64 {
 public:
  static constexpr std::uint64_t kMultiplier = 6364136223846793005ULL;
  static constexpr std::uint64_t kIncrement = 1442695040888963407ULL;

  explicit Lcg64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ = state_ * kMultiplier + kIncrement;
    return state_;
  }
  // Index in [0, n) from the high 32 bits of the next state.
  std::uint64_t choose(std::uint64_t n) { return (next() >> 32) % n; }

 private:
  std::uint64_t state_;
};

}  // namespace vetcode
