#include "sslv/sampling.hpp"

#include <algorithm>

#include "sslv/errors.hpp"

namespace sslv::sampling {

namespace {

void check_args(int clip_length, int count) {
  if (count < 1) throw InvalidInput("sampling: count must be >= 1");
  if (count > clip_length)
    throw InvalidInput("sampling: count exceeds clip length");
}

}  // namespace

std::vector<int> uniform_sample(int clip_length, int count) {
  check_args(clip_length, count);
  std::vector<int> indices(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    indices[i] = static_cast<int>((2 * static_cast<int64_t>(i) + 1) * clip_length /
                                  (2 * static_cast<int64_t>(count)));
  }
  return indices;
}

std::vector<int> segment_random_sample(int clip_length, int count,
                                       rng::Xoshiro256ss& gen) {
  check_args(clip_length, count);
  std::vector<int> indices(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int lo = static_cast<int>(static_cast<int64_t>(i) * clip_length / count);
    const int hi =
        static_cast<int>(static_cast<int64_t>(i + 1) * clip_length / count) - 1;
    indices[i] = static_cast<int>(gen.uniform_int(lo, hi));
  }
  return indices;
}

std::pair<std::vector<int>, std::vector<int>> dual_temporal_views(
    int clip_length, int count, rng::Xoshiro256ss& gen) {
  auto view_a = uniform_sample(clip_length, count);
  auto view_b = segment_random_sample(clip_length, count, gen);
  return {std::move(view_a), std::move(view_b)};
}

std::pair<std::vector<int>, std::vector<int>> long_short_sample(
    int clip_length, int count, int short_window, rng::Xoshiro256ss& gen) {
  check_args(clip_length, count);
  if (short_window < count || short_window > clip_length)
    throw InvalidInput("long_short_sample: window must satisfy k <= w <= T");
  auto long_view = uniform_sample(clip_length, count);
  const int start =
      static_cast<int>(gen.uniform_int(0, clip_length - short_window));
  auto short_view = uniform_sample(short_window, count);
  for (int& idx : short_view) idx += start;
  return {std::move(long_view), std::move(short_view)};
}

int default_short_window(int clip_length, int count) {
  const int quarter = (clip_length + 3) / 4;
  return std::min(clip_length, std::max(quarter, count));
}

}  // namespace sslv::sampling
