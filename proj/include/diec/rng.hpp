#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

#include "diec/tensor.hpp"

namespace diec {

namespace detail {
inline uint64_t splitmix64(uint64_t& s) {
  uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
inline uint64_t rotl64(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace detail

// FNV-1a of a name, for use as a substream tag.
constexpr uint64_t rng_tag(const char* s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  while (*s) {
    h ^= static_cast<unsigned char>(*s++);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// xoshiro256** stream seeded via splitmix64. Substreams are derived from the
// original seed plus integer tags, so a stream keyed by (sample, trial) is
// identical no matter when or on which thread it is created.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {
    uint64_t s = seed;
    for (auto& w : state_) w = detail::splitmix64(s);
  }

  uint64_t seed() const { return seed_; }

  Rng substream(std::initializer_list<uint64_t> tags) const {
    uint64_t h = seed_;
    for (uint64_t t : tags) {
      uint64_t s = h ^ (t + 0x9e3779b97f4a7c15ULL);
      h = detail::splitmix64(s);
    }
    return Rng(h);
  }
  Rng substream(uint64_t a) const { return substream({a}); }
  Rng substream(uint64_t a, uint64_t b) const { return substream({a, b}); }
  Rng substream(uint64_t a, uint64_t b, uint64_t c) const { return substream({a, b, c}); }

  uint64_t next_u64() {
    uint64_t* s = state_;
    uint64_t result = detail::rotl64(s[1] * 5, 7) * 9;
    uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = detail::rotl64(s[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Box-Muller, cosine branch only: two u64 draws per call, no cached spare,
  // so the draw sequence depends only on call order.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void fill_normal(Tensor<T>& t, double mean = 0.0, double stddev = 1.0) {
    for (auto& v : t.vec()) v = static_cast<T>(mean + stddev * normal());
  }

  template <typename T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    for (auto& v : t.vec()) v = static_cast<T>(lo + (hi - lo) * uniform());
  }

  // Fisher-Yates over [0, n).
  std::vector<uint32_t> permutation(uint32_t n) {
    std::vector<uint32_t> p(n);
    for (uint32_t i = 0; i < n; ++i) p[i] = i;
    for (uint32_t i = n; i > 1; --i) {
      uint32_t j = static_cast<uint32_t>(uniform_int(0, i - 1));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  uint64_t seed_;
  uint64_t state_[4];
};

}  // namespace diec
