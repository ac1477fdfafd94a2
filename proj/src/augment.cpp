#include "sslv/augment.hpp"

#include <algorithm>
#include <cmath>

namespace sslv::augment {

namespace {

float clamp01(double v) {
  return static_cast<float>(std::min(1.0, std::max(0.0, v)));
}

// Bilinear sample at fractional position (y, x) of one frame/channel.
double bilinear(const core::ClipArray& src, int t, double y, double x, int ch) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, src.h - 1);
  const int x1 = std::min(x0 + 1, src.w - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  const double top = src.at(t, y0, x0, ch) * (1 - fx) + src.at(t, y0, x1, ch) * fx;
  const double bot = src.at(t, y1, x0, ch) * (1 - fx) + src.at(t, y1, x1, ch) * fx;
  return top * (1 - fy) + bot * fy;
}

}  // namespace

core::ClipArray apply(const core::ClipArray& frames, const AugmentSpec& spec,
                      rng::Xoshiro256ss& gen) {
  if (spec.is_identity()) return frames;

  const bool flip = spec.hflip_prob > 0.0 && gen.uniform01() < spec.hflip_prob;

  const double scale =
      spec.crop_min_scale < 1.0 ? gen.uniform(spec.crop_min_scale, 1.0) : 1.0;
  const int crop_h = std::max(1, static_cast<int>(std::lround(scale * frames.h)));
  const int crop_w = std::max(1, static_cast<int>(std::lround(scale * frames.w)));
  const int off_y = crop_h < frames.h
                        ? static_cast<int>(gen.uniform_int(0, frames.h - crop_h))
                        : 0;
  const int off_x = crop_w < frames.w
                        ? static_cast<int>(gen.uniform_int(0, frames.w - crop_w))
                        : 0;

  std::vector<double> jitter(static_cast<size_t>(frames.c), 0.0);
  if (spec.color_jitter > 0.0) {
    for (double& j : jitter) j = gen.uniform(-spec.color_jitter, spec.color_jitter);
  }

  core::ClipArray out(frames.t, frames.h, frames.w, frames.c);
  const bool resample = crop_h != frames.h || crop_w != frames.w;
  for (int t = 0; t < frames.t; ++t) {
    for (int y = 0; y < frames.h; ++y) {
      for (int x = 0; x < frames.w; ++x) {
        const int sx = flip ? frames.w - 1 - x : x;
        for (int ch = 0; ch < frames.c; ++ch) {
          double v;
          if (resample) {
            const double src_y =
                off_y + (crop_h - 1) * (frames.h > 1 ? static_cast<double>(y) / (frames.h - 1) : 0.0);
            const double src_x =
                off_x + (crop_w - 1) * (frames.w > 1 ? static_cast<double>(sx) / (frames.w - 1) : 0.0);
            v = bilinear(frames, t, src_y, src_x, ch);
          } else {
            v = frames.at(t, y, sx, ch);
          }
          v += jitter[ch];
          if (spec.noise_sigma > 0.0) v += gen.gaussian(0.0, spec.noise_sigma);
          out.at(t, y, x, ch) = clamp01(v);
        }
      }
    }
  }
  return out;
}

}  // namespace sslv::augment
