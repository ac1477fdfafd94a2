#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sslv/errors.hpp"

namespace sslv::core {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct LabelSpace {
  int num_classes = 0;
  std::vector<std::string> names;

  LabelSpace() = default;
  LabelSpace(int num_classes, std::vector<std::string> names);

  // "class_0", "class_1", ... convenience constructor.
  static LabelSpace indexed(int num_classes);
};

// Dense [T, H, W, C] float array, row-major, values expected in [0, 1].
struct ClipArray {
  int t = 0, h = 0, w = 0, c = 0;
  std::vector<float> values;

  ClipArray() = default;
  ClipArray(int t, int h, int w, int c)
      : t(t), h(h), w(w), c(c),
        values(static_cast<size_t>(t) * h * w * c, 0.0f) {}

  size_t size() const { return values.size(); }
  float& at(int ti, int yi, int xi, int ci) {
    return values[((static_cast<size_t>(ti) * h + yi) * w + xi) * c + ci];
  }
  float at(int ti, int yi, int xi, int ci) const {
    return values[((static_cast<size_t>(ti) * h + yi) * w + xi) * c + ci];
  }
};

struct VideoClip {
  std::string clip_id;
  ClipArray frames;
  std::optional<int> label;

  // Validates T >= 1 and all values finite in [0, 1].
  static VideoClip make(std::string clip_id, ClipArray frames,
                        std::optional<int> label = std::nullopt);
};

struct FrameView {
  std::string clip_id;
  std::vector<int> frame_indices;  // strictly increasing, in [0, T)
  ClipArray frames;                // [k, H, W, C]
};

// Extracts the frames at `indices` from a clip. Indices must be strictly
// increasing and within range.
FrameView take_view(const VideoClip& clip, const std::vector<int>& indices);

struct Prediction {
  std::vector<double> probs;
  int predicted_class = 0;
  double confidence = 0.0;

  // Validates the probability vector and fills the derived fields
  // (argmax with lowest-index tie-break, confidence of the argmax class).
  static Prediction from_probs(std::vector<double> probs);
};

// Per-pixel class probabilities [C, H, W] plus the derived argmax mask.
struct SegPrediction {
  int num_classes = 0, h = 0, w = 0;
  std::vector<double> probs;     // [C, H, W]
  std::vector<int> argmax_mask;  // [H, W]

  static SegPrediction from_probs(int num_classes, int h, int w,
                                  std::vector<double> probs);

  double prob_at(int cls, int y, int x) const {
    return probs[(static_cast<size_t>(cls) * h + y) * w + x];
  }
};

struct MetricReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::optional<std::vector<double>> dice;

  // Flat JSON object with snake_case keys.
  std::string to_json() const;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Numerically stable softmax (max-shift). Output sums to 1 within 1e-9.
std::vector<double> softmax(std::span<const double> logits);

// Index of the maximal entry; ties resolved to the lowest index.
int argmax_class(std::span<const double> probs);

// 2|A∩B| / (|A|+|B|) on the class's binary masks; 1.0 when both empty.
double dice_score(std::span<const int> pred_mask, std::span<const int> gt_mask,
                  int class_id);

// Clip-level accuracy, per-class F1 (0 for classes never predicted nor
// present), and their unweighted mean.
MetricReport classification_metrics(std::span<const int> preds,
                                    std::span<const int> gts,
                                    const LabelSpace& label_space);

// Linear-interpolation percentile at position q/100 * (n-1) of a sorted
// sequence. q must lie in [0, 100].
double percentile_sorted(std::span<const double> sorted_values, double q);

// Convenience: copies, sorts, then interpolates.
double percentile(std::vector<double> values, double q);

}  // namespace sslv::core
