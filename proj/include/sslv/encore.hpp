#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sslv/core.hpp"
#include "sslv/data.hpp"
#include "sslv/models.hpp"

namespace sslv::encore {

// Pixels failing their class threshold carry this sentinel and are excluded
// from losses and Dice bookkeeping.
inline constexpr int kIgnore = 255;

enum class ProfileSource { cac, act, fixed };

struct ThresholdProfile {
  std::vector<double> per_class_threshold;  // each in (0,1)
  ProfileSource source = ProfileSource::fixed;
  double percentile_q = 0.0;          // when source == cac
  std::vector<double> candidate_grid;  // mean thresholds of the evaluated grid (act)

  static ThresholdProfile fixed_uniform(int num_classes, double threshold);
  double mean_threshold() const;
};

struct PseudoMask {
  std::vector<int> mask;  // [H*W], class id or kIgnore
  std::string source_frame_id;
  double accepted_pixel_fraction = 0.0;
};

// Per class c: the multiset of probs[c, y, x] over pixels where both the
// prediction argmax and the ground truth equal c.
std::vector<std::vector<double>> collect_tp_confidences(
    std::span<const core::SegPrediction> seg_preds,
    std::span<const std::vector<int>> gt_masks, int num_classes);

// Per-class linear-interpolation percentile of the true-positive confidence
// distribution; empty classes fall back to t0.
ThresholdProfile cac_thresholds(
    const std::vector<std::vector<double>>& tp_confidences, double percentile_q,
    double fallback_t0);

// Keeps the argmax class where its probability clears the class threshold,
// IGNORE otherwise.
PseudoMask generate_pseudo_mask(const core::SegPrediction& seg_pred,
                                const ThresholdProfile& profile,
                                std::string source_frame_id = "");

struct ActSelection {
  ThresholdProfile best;
  int best_index = -1;
  std::vector<double> mean_dice;  // one entry per candidate
};

// Scores every candidate by the mean foreground Dice of its pseudo-masks
// (non-IGNORE pixels form the prediction) against the validation ground
// truth; ties prefer the lower mean threshold, then the lower index.
ActSelection act_select(std::span<const ThresholdProfile> candidates,
                        std::span<const core::SegPrediction> val_preds,
                        std::span<const std::vector<int>> val_gts);

// Mean over foreground classes (>= 1) of the Dice between the pseudo-mask's
// labeled pixels and the ground truth.
double mean_foreground_dice(std::span<const int> pseudo_mask,
                            std::span<const int> gt_mask, int num_classes);

// 8-bit binary PGM; IGNORE pixels are written as 255.
void write_pgm(const std::vector<int>& mask, int height, int width,
               const std::string& path);

// Combined pixel cross-entropy + soft-Dice loss on probability maps
// [C, H, W]; target pixels equal to kIgnore are excluded. Fills the gradient
// with respect to the logits (softmax chain included).
double seg_loss_and_dlogits(const std::vector<double>& probs,
                            const std::vector<int>& target, int num_classes,
                            int h, int w, double dice_weight,
                            std::vector<double>& dlogits);

struct EncoreConfig {
  models::SegModelConfig model;
  int epochs = 20;
  double lr = 0.02;
  double momentum = 0.9;
  models::Optimizer optimizer = models::Optimizer::adam;
  int batch_size = 8;
  uint64_t seed = 1;

  bool adaptive = true;            // false = fixed thresholding throughout
  double fixed_threshold = 0.9;    // used when adaptive == false
  int recalib_period = 5;          // epochs between CAC/ACT events
  std::vector<double> percentiles = {10.0, 25.0, 50.0};
  std::vector<double> offsets = {};  // extra candidates: base CAC profile +- delta
  std::vector<double> fixed_candidates = {0.5, 0.7, 0.9};
  double fallback_t0 = 0.5;
  double initial_threshold = 0.9;  // profile before the first recalibration
  double calib_fraction = 0.25;    // held-out labeled share used by ACT
  double unsup_weight = 0.5;
  double dice_loss_weight = 1.0;
};

struct CandidateEval {
  ThresholdProfile profile;
  double mean_dice = 0.0;
  double accepted_fraction = 0.0;
};

struct RecalibEvent {
  int epoch = 0;
  std::vector<CandidateEval> candidates;
  int adopted_index = -1;

  std::string to_json() const;
};

struct EncoreResult {
  models::SegmentationNet model;
  std::vector<RecalibEvent> events;
  std::vector<double> loss_curve;
};

// Alternates supervised Dice+CE training on labeled frames with
// threshold-filtered pseudo-mask self-training on unlabeled frames; every
// recalib_period epochs the candidate grid is rebuilt from CAC and scored by
// ACT on a held-out labeled split.
EncoreResult train_encore(std::span<const data::SegSample* const> labeled,
                          std::span<const data::SegSample* const> unlabeled,
                          const EncoreConfig& config);

// Dataset-level foreground Dice of a model over samples (pooled per class,
// mean over foreground classes).
double evaluate_seg(const models::SegmentationNet& model,
                    std::span<const data::SegSample* const> samples);

}  // namespace sslv::encore
