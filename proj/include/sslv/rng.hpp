#pragma once

#include <cmath>
#include <cstdint>

#include "sslv/errors.hpp"

// Pinned PRNG: SplitMix64 for seeding/derivation, xoshiro256** for streams.
// All stochastic behavior in this library goes through these generators so
// that runs are bit-reproducible across platforms and standard libraries.

namespace sslv::rng {

struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

// Derives an independent child seed from (base, salt). Used to give every
// clip / stream / stage its own generator without sharing state.
inline uint64_t derive_seed(uint64_t base, uint64_t salt) {
  SplitMix64 mix(base ^ (0x9E3779B97F4A7C15ULL * (salt + 1)));
  return mix.next();
}

inline uint64_t derive_seed(uint64_t base, uint64_t salt_a, uint64_t salt_b) {
  return derive_seed(derive_seed(base, salt_a), salt_b);
}

class Xoshiro256ss {
 public:
  explicit Xoshiro256ss(uint64_t seed) {
    SplitMix64 mix(seed);
    for (auto& word : s_) word = mix.next();
  }

  uint64_t next() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [lo, hi], inclusive. Rejection sampling, no modulo bias.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw InvalidInput("uniform_int: empty range");
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<int64_t>(next());  // full 64-bit range
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t draw;
    do {
      draw = next();
    } while (draw >= limit);
    return lo + static_cast<int64_t>(draw % span);
  }

  // Box-Muller. Draws two uniforms per call; no cached spare, so the output
  // is a pure function of the stream position.
  double gaussian(double mean = 0.0, double sigma = 1.0) {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sigma * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  template <typename T>
  void shuffle(T* data, size_t n) {
    for (size_t i = n; i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(data[i - 1], data[j]);
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
};

// Fixed salts for the per-purpose stream tree hung off one experiment seed.
namespace salt {
inline constexpr uint64_t kInit = 1;       // parameter initialization
inline constexpr uint64_t kBatch = 2;      // labeled batch shuffling
inline constexpr uint64_t kView = 3;       // labeled training-view sampling
inline constexpr uint64_t kAugment = 4;    // augmentation parameters
inline constexpr uint64_t kUnlabeled = 5;  // unlabeled batch shuffling
inline constexpr uint64_t kUlView = 6;     // unlabeled view sampling
inline constexpr uint64_t kUlAugment = 7;  // unlabeled augmentation
inline constexpr uint64_t kPseudo = 8;     // pseudo-label generation
inline constexpr uint64_t kSplit = 9;      // dataset splitting
inline constexpr uint64_t kClip = 10;      // per-clip generator seeds
inline constexpr uint64_t kCalib = 11;     // calibration hold-out selection
}  // namespace salt

}  // namespace sslv::rng
