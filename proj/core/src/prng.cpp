#include "attnpain/prng.hpp"

#include <cmath>
#include "attnpain/errors.hpp"

namespace attnpain {

namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Prng::Prng(uint64_t seed) : seed_(seed) {
  uint64_t x = seed;
  for (auto& s : state_) s = splitmix64(x);
}

Prng Prng::split(uint64_t stream_tag) const {
  // Child seed mixes the parent seed and tag through SplitMix64 twice so
  // (seed, tag) collisions require a full 64-bit collision.
  uint64_t x = seed_ ^ (0x6a09e667f3bcc909ULL + stream_tag);
  uint64_t child = splitmix64(x);
  x ^= stream_tag * 0x9e3779b97f4a7c15ULL;
  child ^= splitmix64(x);
  return Prng(child);
}

Prng Prng::split(std::string_view stream_tag) const {
  return split(fnv1a(stream_tag));
}

uint64_t Prng::next_u64() {
  uint64_t* s = state_;
  const uint64_t result = rotl(s[0] + s[3], 23) + s[0];
  const uint64_t t = s[1] << 17;
  s[2] ^= s[0];
  s[3] ^= s[1];
  s[1] ^= s[2];
  s[0] ^= s[3];
  s[2] ^= t;
  s[3] = rotl(s[3], 45);
  return result;
}

uint64_t Prng::below(uint64_t n) {
  if (n == 0) throw ValidationError("Prng::below: n must be positive");
  const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
  uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

double Prng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Prng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Prng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // Box-Muller on (0,1] uniforms; u1 shifted away from 0 for the log.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

double Prng::truncated_normal(double stddev, double clip) {
  if (stddev <= 0.0) return 0.0;
  for (;;) {
    double x = normal() * stddev;
    if (std::abs(x) <= clip * stddev) return x;
  }
}

double Prng::gamma(double shape) {
  if (shape <= 0.0) throw ValidationError("Prng::gamma: shape must be positive");
  if (shape < 1.0) {
    // Boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
    double u = 1.0 - uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = 1.0 - uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double Prng::beta(double a, double b) {
  double ga = gamma(a);
  double gb = gamma(b);
  double s = ga + gb;
  if (s == 0.0) return 0.5;
  return ga / s;
}

}  // namespace attnpain
