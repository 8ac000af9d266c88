#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace attnpain {

// Deterministic, splittable pseudo-random stream.
//
// Generator: xoshiro256++ (Blackman/Vigna), state expanded from a 64-bit
// seed with SplitMix64. split(tag) derives an independent child stream by
// hashing the parent seed with the tag (FNV-1a for strings), so every
// consumer (model init, dropout, fold shuffling, ...) owns its own stream
// and identical seeds reproduce runs bit-exactly on one platform.
//
// All distributions are implemented here rather than via <random> so the
// byte sequence does not depend on the standard library implementation.
class Prng {
 public:
  explicit Prng(uint64_t seed);

  uint64_t seed() const { return seed_; }

  // Independent child streams. Children of distinct tags (or the same tag
  // on distinct parents) are decorrelated.
  Prng split(uint64_t stream_tag) const;
  Prng split(std::string_view stream_tag) const;

  uint64_t next_u64();
  // Unbiased integer in [0, n), n > 0. Rejection sampling.
  uint64_t below(uint64_t n);
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; second variate cached.
  double normal();
  // N(0, stddev^2) resampled until |x| <= clip * stddev.
  double truncated_normal(double stddev, double clip = 2.0);
  // Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 handled by boosting.
  double gamma(double shape);
  // Beta(a, b) as Ga / (Ga + Gb).
  double beta(double a, double b);

  bool bernoulli(double p) { return uniform() < p; }

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  uint64_t seed_ = 0;
  uint64_t state_[4] = {0, 0, 0, 0};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace attnpain
