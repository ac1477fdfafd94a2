#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sslv/rng.hpp"

namespace sslv::sampling {

enum class Strategy { uniform, segment_random, long_short };

struct SamplingSpec {
  Strategy strategy = Strategy::segment_random;
  int frames_per_view = 8;
  int short_window = 0;  // 0 = auto (ceil(T/4), clamped to >= k)
  uint64_t seed = 0;
};

// Deterministic evaluation view: idx_i = floor((i + 0.5) * T / k).
std::vector<int> uniform_sample(int clip_length, int count);

// One uniformly random index per contiguous segment
// [floor(i*T/k), floor((i+1)*T/k)).
std::vector<int> segment_random_sample(int clip_length, int count,
                                       rng::Xoshiro256ss& gen);

// View A = uniform, view B = segment-random; two samplings of the same clip.
std::pair<std::vector<int>, std::vector<int>> dual_temporal_views(
    int clip_length, int count, rng::Xoshiro256ss& gen);

// Long view spans the whole clip; short view is a uniform sample of a random
// contiguous window of length `short_window`.
std::pair<std::vector<int>, std::vector<int>> long_short_sample(
    int clip_length, int count, int short_window, rng::Xoshiro256ss& gen);

// Window default used when SamplingSpec.short_window == 0.
int default_short_window(int clip_length, int count);

}  // namespace sslv::sampling
