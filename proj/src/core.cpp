#include "sslv/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"

namespace sslv::core {

LabelSpace::LabelSpace(int num_classes, std::vector<std::string> names)
    : num_classes(num_classes), names(std::move(names)) {
  if (num_classes < 2) throw InvalidInput("LabelSpace: num_classes must be >= 2");
  if (static_cast<int>(this->names.size()) != num_classes)
    throw InvalidInput("LabelSpace: names length must equal num_classes");
  std::set<std::string> unique(this->names.begin(), this->names.end());
  if (static_cast<int>(unique.size()) != num_classes)
    throw InvalidInput("LabelSpace: class names must be unique");
}

LabelSpace LabelSpace::indexed(int num_classes) {
  std::vector<std::string> names;
  names.reserve(static_cast<size_t>(num_classes));
  for (int i = 0; i < num_classes; ++i) names.push_back("class_" + std::to_string(i));
  return LabelSpace(num_classes, std::move(names));
}

VideoClip VideoClip::make(std::string clip_id, ClipArray frames,
                          std::optional<int> label) {
  if (frames.t < 1) throw InvalidInput("VideoClip: T must be >= 1");
  if (frames.h < 1 || frames.w < 1 || frames.c < 1)
    throw InvalidInput("VideoClip: empty spatial dims");
  for (float v : frames.values) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      throw InvalidInput("VideoClip: frame values must be finite and in [0,1]");
  }
  VideoClip clip;
  clip.clip_id = std::move(clip_id);
  clip.frames = std::move(frames);
  clip.label = label;
  return clip;
}

FrameView take_view(const VideoClip& clip, const std::vector<int>& indices) {
  if (indices.empty()) throw InvalidInput("take_view: empty index list");
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= clip.frames.t)
      throw InvalidInput("take_view: index out of range");
    if (i > 0 && indices[i] <= indices[i - 1])
      throw InvalidInput("take_view: indices must be strictly increasing");
  }
  FrameView view;
  view.clip_id = clip.clip_id;
  view.frame_indices = indices;
  view.frames = ClipArray(static_cast<int>(indices.size()), clip.frames.h,
                          clip.frames.w, clip.frames.c);
  const size_t frame_size =
      static_cast<size_t>(clip.frames.h) * clip.frames.w * clip.frames.c;
  for (size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(clip.frames.values.begin() + indices[i] * frame_size, frame_size,
                view.frames.values.begin() + i * frame_size);
  }
  return view;
}

namespace {

void validate_probs(std::span<const double> probs, double tol) {
  if (probs.empty()) throw InvalidInput("probability vector is empty");
  double sum = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0)
      throw InvalidInput("probability vector has negative or non-finite entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > tol)
    throw InvalidInput("probability vector does not sum to 1");
}

}  // namespace

Prediction Prediction::from_probs(std::vector<double> probs) {
  validate_probs(probs, 1e-6);
  Prediction p;
  p.predicted_class = argmax_class(probs);
  p.confidence = probs[static_cast<size_t>(p.predicted_class)];
  p.probs = std::move(probs);
  return p;
}

SegPrediction SegPrediction::from_probs(int num_classes, int h, int w,
                                        std::vector<double> probs) {
  if (num_classes < 2 || h < 1 || w < 1)
    throw InvalidInput("SegPrediction: bad dimensions");
  if (probs.size() != static_cast<size_t>(num_classes) * h * w)
    throw InvalidInput("SegPrediction: probability array size mismatch");
  SegPrediction sp;
  sp.num_classes = num_classes;
  sp.h = h;
  sp.w = w;
  sp.probs = std::move(probs);
  sp.argmax_mask.assign(static_cast<size_t>(h) * w, 0);
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t px = 0; px < plane; ++px) {
    double sum = 0.0;
    int best = 0;
    double best_p = sp.probs[px];
    for (int cls = 0; cls < num_classes; ++cls) {
      const double p = sp.probs[cls * plane + px];
      if (!std::isfinite(p) || p < 0.0)
        throw InvalidInput("SegPrediction: negative or non-finite probability");
      sum += p;
      if (p > best_p) {
        best_p = p;
        best = cls;
      }
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw InvalidInput("SegPrediction: per-pixel probabilities must sum to 1");
    sp.argmax_mask[px] = best;
  }
  return sp;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["macro_f1"] = macro_f1;
  j["per_class_f1"] = per_class_f1;
  if (dice.has_value()) j["dice"] = *dice;
  return j.dump();
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInput("softmax: empty logits");
  for (double v : logits) {
    if (!std::isfinite(v)) throw InvalidInput("softmax: non-finite logit");
  }
  const double shift = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - shift);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

int argmax_class(std::span<const double> probs) {
  if (probs.empty()) throw InvalidInput("argmax_class: empty vector");
  int best = 0;
  for (size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = static_cast<int>(i);
  }
  return best;
}

double dice_score(std::span<const int> pred_mask, std::span<const int> gt_mask,
                  int class_id) {
  if (pred_mask.size() != gt_mask.size())
    throw InvalidInput("dice_score: mask shape mismatch");
  size_t pred_count = 0, gt_count = 0, overlap = 0;
  for (size_t i = 0; i < pred_mask.size(); ++i) {
    const bool in_pred = pred_mask[i] == class_id;
    const bool in_gt = gt_mask[i] == class_id;
    pred_count += in_pred;
    gt_count += in_gt;
    overlap += in_pred && in_gt;
  }
  if (pred_count + gt_count == 0) return 1.0;
  return 2.0 * static_cast<double>(overlap) /
         static_cast<double>(pred_count + gt_count);
}

MetricReport classification_metrics(std::span<const int> preds,
                                    std::span<const int> gts,
                                    const LabelSpace& label_space) {
  if (preds.size() != gts.size())
    throw InvalidInput("classification_metrics: length mismatch");
  if (preds.empty()) throw InvalidInput("classification_metrics: empty input");
  const int n_cls = label_space.num_classes;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= n_cls || gts[i] < 0 || gts[i] >= n_cls)
      throw InvalidInput("classification_metrics: class index out of range");
  }
  std::vector<size_t> tp(n_cls, 0), fp(n_cls, 0), fn(n_cls, 0);
  size_t correct = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == gts[i]) {
      ++correct;
      ++tp[preds[i]];
    } else {
      ++fp[preds[i]];
      ++fn[gts[i]];
    }
  }
  MetricReport report;
  report.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
  report.per_class_f1.resize(n_cls, 0.0);
  double f1_sum = 0.0;
  for (int cls = 0; cls < n_cls; ++cls) {
    const size_t denom = 2 * tp[cls] + fp[cls] + fn[cls];
    report.per_class_f1[cls] =
        denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[cls]) / static_cast<double>(denom);
    f1_sum += report.per_class_f1[cls];
  }
  report.macro_f1 = f1_sum / n_cls;
  return report;
}

double percentile_sorted(std::span<const double> sorted_values, double q) {
  if (sorted_values.empty()) throw InvalidInput("percentile: empty input");
  if (!(q >= 0.0 && q <= 100.0)) throw InvalidInput("percentile: q out of [0,100]");
  const double pos = q / 100.0 * static_cast<double>(sorted_values.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = static_cast<size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return sorted_values[lo] + (sorted_values[hi] - sorted_values[lo]) * frac;
}

double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, q);
}

}  // namespace sslv::core
