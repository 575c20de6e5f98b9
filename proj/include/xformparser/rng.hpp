#pragma once

#include <cstdint>
#include <vector>

namespace xfp::rng {

// SplitMix64. Used to expand seeds and derive independent streams.
struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
};

// xoshiro256** 1.0 (Blackman/Vigna), seeded through SplitMix64.
// This is the only sampling generator used anywhere in the project; the
// platform std::mt19937 and std::shuffle are never used so output is
// identical across compilers.
class Xoshiro256 {
 public:
  explicit Xoshiro256(uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  uint64_t next() {
    uint64_t result = rotl(s_[1] * 5, 7) * 9;
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, bound) via rejection.
  uint64_t below(uint64_t bound) {
    if (bound == 0) return 0;
    uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  // Integer in [lo, hi] inclusive.
  int64_t range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

// Derives the seed of a named sub-stream, so per-document / per-epoch streams
// are independent of how many draws earlier streams consumed.
inline uint64_t derive(uint64_t seed, uint64_t stream_tag, uint64_t index = 0) {
  SplitMix64 sm(seed ^ (0x6a09e667f3bcc909ULL * (stream_tag + 1)));
  uint64_t base = sm.next();
  SplitMix64 sm2(base + 0x9e3779b97f4a7c15ULL * index);
  return sm2.next();
}

// Deterministic Fisher-Yates.
template <typename T>
void shuffle(std::vector<T>& v, Xoshiro256& g) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(g.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace xfp::rng
