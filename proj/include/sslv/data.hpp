#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sslv/core.hpp"

namespace sslv::data {

// ---------------------------------------------------------------------------
// Synthetic clip classification data
// ---------------------------------------------------------------------------

// Each class c renders as a per-channel base tone plus a drifting sinusoidal
// texture with class-specific orientation, spatial frequency, and motion
// rate:
//
//   value(t, y, x, ch) = base(c, ch) + 0.25 * gain(c, ch) *
//       sin(2*pi * freq(c) * (x*cos(th) + y*sin(th)) / W + phase + rate(c)*t)
//
//   base    = 0.3 + 0.3 * (((3*c + ch) % 5) / 4)   (distinct channel signature)
//   th      = pi * c / num_classes
//   freq(c) = 2 + c                                 (cycles across the frame)
//   rate(c) = 0.4 + 0.35 * c                        (radians per frame)
//   gain    = 0.55 + 0.45 * (((c + ch) % 3) / 2)
//
// `phase` is drawn once per clip from its derived generator; gaussian noise
// with sigma = noise_sigma is then added per value and the result clamped to
// [0, 1]. Per-clip seed: derive_seed(spec.seed, salt::kClip, clip_index).
struct SyntheticClipSpec {
  int num_classes = 4;
  int clips_per_class = 32;
  int frames = 24;  // T
  int height = 32;
  int width = 32;
  int channels = 3;
  double noise_sigma = 0.08;
  uint64_t seed = 1;
};

struct ClipDataset {
  core::LabelSpace label_space;
  std::vector<core::VideoClip> clips;  // labels carry the generator truth
};

ClipDataset generate_clip_dataset(const SyntheticClipSpec& spec);

// ---------------------------------------------------------------------------
// Synthetic segmentation data
// ---------------------------------------------------------------------------

// Classes: 0 = background, 1 = instrument (elongated capsule), 2 = anatomy
// (ellipse blob). Instruments are drawn last and overwrite anatomy. Shapes
// are placed fully inside the frame; instrument pixel areas are kept within
// [instrument_area_min, instrument_area_max] by deterministic resampling.
struct SyntheticSegSpec {
  int num_images = 64;
  int height = 32;
  int width = 32;
  int channels = 3;
  int min_instruments = 1, max_instruments = 3;
  int min_anatomy = 0, max_anatomy = 2;
  double instrument_length_min = 10.0, instrument_length_max = 20.0;
  double instrument_halfwidth_min = 1.0, instrument_halfwidth_max = 2.2;
  int instrument_area_min = 20, instrument_area_max = 160;
  double anatomy_axis_min = 3.0, anatomy_axis_max = 7.0;
  double noise_sigma = 0.05;
  uint64_t seed = 1;
};

inline constexpr int kSegNumClasses = 3;

struct SegSample {
  std::string id;
  core::ClipArray image;  // T = 1
  std::vector<int> mask;  // [H * W], values in {0, 1, 2}
};

struct SegDataset {
  int num_classes = kSegNumClasses;
  std::vector<SegSample> samples;
};

SegDataset generate_seg_dataset(const SyntheticSegSpec& spec);

// ---------------------------------------------------------------------------
// Manifests and splits
// ---------------------------------------------------------------------------

enum class Split { labeled, unlabeled, val, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);  // throws ParseError

struct ManifestEntry {
  std::string clip_id;
  std::optional<std::string> path;
  std::optional<uint64_t> generator_seed;
  std::optional<int> label;
  Split split = Split::unlabeled;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  // Throws InvalidInput on duplicate clip ids.
  void validate() const;
};

// Stratified split: per class, shuffle then take max(1, floor(f*n)) labeled
// clips, floor(f*n) val and test clips; the remainder is unlabeled. Labels of
// unlabeled entries are null in the manifest (ground truth stays hidden).
Manifest split_dataset(const ClipDataset& dataset, double labeled_fraction,
                       double val_fraction, double test_fraction,
                       uint64_t seed);

// Same scheme with a single stratum (segmentation frames carry no class).
Manifest split_seg_dataset(const SegDataset& dataset, double labeled_fraction,
                           double val_fraction, double test_fraction,
                           uint64_t seed);

// JSON-lines, one entry per line. Parse errors carry the line number.
void write_manifest(const Manifest& manifest, const std::string& path);
Manifest read_manifest(const std::string& path);

// Binary clip file: magic "CLIP1", then T,H,W,C as little-endian u32,
// then row-major [T,H,W,C] little-endian float32 payload.
void write_clip_file(const core::ClipArray& frames, const std::string& path);
core::ClipArray read_clip_file(const std::string& path);

}  // namespace sslv::data
