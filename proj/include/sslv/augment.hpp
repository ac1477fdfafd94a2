#pragma once

#include "sslv/core.hpp"
#include "sslv/rng.hpp"

namespace sslv::augment {

// Strong-augmentation recipe: horizontal flip, per-channel color jitter,
// additive gaussian noise, random crop-resize. The same transform parameters
// apply to every frame of a view so the clip stays temporally coherent.
struct AugmentSpec {
  double hflip_prob = 0.5;
  double color_jitter = 0.2;     // per-channel additive offset in [-j, j]
  double noise_sigma = 0.05;
  double crop_min_scale = 0.8;   // crop side scale drawn from [min, 1]

  static AugmentSpec identity() { return {0.0, 0.0, 0.0, 1.0}; }
  bool is_identity() const {
    return hflip_prob == 0.0 && color_jitter == 0.0 && noise_sigma == 0.0 &&
           crop_min_scale == 1.0;
  }
};

// Applies the spec to a view's frames; output values clamped to [0, 1].
core::ClipArray apply(const core::ClipArray& frames, const AugmentSpec& spec,
                      rng::Xoshiro256ss& gen);

}  // namespace sslv::augment
