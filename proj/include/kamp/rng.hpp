#pragma once

// Deterministic random number generation.
//
// std::mt19937 + std::*_distribution are not pinned across standard library
// implementations, so everything random in this project flows through the
// generators below.  PCG32 supplies the raw stream, splitmix64 mixes seeds,
// and Box-Muller produces gaussians.  Identical seeds give identical streams
// on every platform.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace kamp {

// splitmix64: used to expand/mix user seeds into well-distributed state.
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over a tag string, for deriving named substreams.
inline uint64_t hash_tag(std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derive an independent seed from a base seed plus a purpose tag and indices.
// Used so that e.g. (seed, "step_init", step) and (seed, "batch_order", step)
// draw from unrelated streams, and so that resuming at step t replays exactly
// the stream an uninterrupted run would have used.
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a = 0,
                            uint64_t b = 0) {
  uint64_t s = base ^ 0x6a09e667f3bcc909ULL;
  s ^= hash_tag(tag) + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
  s ^= (a + 0x3c6ef372fe94f82bULL) + (s << 6) + (s >> 2);
  s ^= (b + 0xa54ff53a5f1d36f1ULL) + (s << 6) + (s >> 2);
  uint64_t st = s;
  return splitmix64(st);
}

// Minimal PCG32 (XSH RR 64/32).
class Pcg32 {
 public:
  explicit Pcg32(uint64_t seed = 0x853c49e6748fea9bULL, uint64_t seq = 0xda3e39cb94b95bdbULL) {
    state_ = 0u;
    inc_ = (seq << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Unbiased integer in [0, n).
  uint32_t next_below(uint32_t n) {
    if (n <= 1) return 0;
    uint32_t threshold = (-n) % n;
    for (;;) {
      uint32_t r = next_u32();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Uniform in [0,1) with 53 random bits.
  double unit() {
    uint64_t r = next_u64() >> 11;
    return static_cast<double>(r) * (1.0 / 9007199254740992.0);
  }

  // Standard normal via Box-Muller (no cached spare: state stays simple).
  double gaussian() {
    double u1 = unit();
    double u2 = unit();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  // Fisher-Yates shuffle of indices [0, n) into `out`.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_below(static_cast<uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  uint64_t inc_;
};

}  // namespace kamp
