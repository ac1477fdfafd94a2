#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sslv/augment.hpp"
#include "sslv/core.hpp"
#include "sslv/models.hpp"

namespace sslv::dist {

// Scalar probabilities the earlier checkpoints assign to the final
// checkpoint's predicted class, plus the final softmax vector.
struct CheckpointTriple {
  double p_third = 0.0;
  double p_two_thirds = 0.0;
  std::vector<double> p_final_vec;
  int predicted_class = 0;

  static CheckpointTriple make(double p_third, double p_two_thirds,
                               std::vector<double> p_final_vec);
};

struct PseudoLabel {
  std::string clip_id;
  int label = -1;
  double reliability = 0.0;
  bool retained_by_rank = false;
  bool temporal_ok = false;
  bool transform_ok = false;
};

// R = (h(p_third, pf) + 2 h(p_two_thirds, pf)) / 3 with h(a,b) = ab/(a+b),
// h(0,0) = 0, and pf the final probability of the predicted class. R is in
// [0, 1/2] and increases with agreement between checkpoints.
double reliability_score(const CheckpointTriple& triple);

// Sort by score descending (clip_id ascending on ties) and keep the first
// ceil(N/2) ids.
std::vector<std::string> retain_top_half(
    const std::vector<std::pair<std::string, double>>& scored);

// Same predicted class across two frame-sampling views.
bool temporal_invariance_check(const core::Prediction& pred_view_a,
                               const core::Prediction& pred_view_b);

// Same predicted class between weak (identity) and strongly augmented views.
bool transformation_invariance_check(const core::Prediction& pred_weak,
                                     const core::Prediction& pred_strong);

// Retained by rank AND both invariance verdicts.
bool dual_filter(const PseudoLabel& candidate);

// Labels every clip with the final checkpoint on the canonical uniform view,
// scores the triple, ranks, and runs both invariance checks. Deterministic
// given the seed; per-clip work uses derived generators.
std::vector<PseudoLabel> generate_pseudo_labels(
    std::span<const models::Checkpoint> teacher_checkpoints,
    const models::ModelConfig& model_config,
    std::span<const core::VideoClip* const> unlabeled,
    const augment::AugmentSpec& augment_spec, uint64_t seed);

struct DistConfig {
  models::ModelConfig model;
  models::TrainConfig train;
  augment::AugmentSpec augment;
  uint64_t seed = 1;
};

struct StageReport {
  int stage = 0;
  int n_pseudo = 0;
  int n_accepted = 0;
  double pseudo_precision = 0.0;             // accepted labels vs hidden truth
  double pseudo_precision_unfiltered = 0.0;  // all pseudo-labels vs hidden truth
  core::MetricReport student_metrics;

  std::string to_json() const;
};

struct DistResult {
  std::vector<StageReport> stages;  // exactly two
  models::ClipClassifier student;
};

// Two-stage self-training. Unlabeled clips may carry their hidden generator
// labels; those are used only to report pseudo-label precision. Student
// metrics are computed on eval_set.
DistResult run_dist(std::span<const models::LabeledClip> labeled,
                    std::span<const core::VideoClip* const> unlabeled,
                    std::span<const models::LabeledClip> eval_set,
                    const core::LabelSpace& label_space,
                    const DistConfig& config);

}  // namespace sslv::dist
