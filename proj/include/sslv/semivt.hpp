#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sslv/augment.hpp"
#include "sslv/core.hpp"
#include "sslv/models.hpp"

namespace sslv::semivt {

// Per-class embedding centroids maintained by exponential moving average.
// Rows start uninitialized and take the first embedding verbatim.
class PrototypeStore {
 public:
  PrototypeStore(int num_classes, int dim, double momentum);

  int num_classes() const { return num_classes_; }
  int dim() const { return dim_; }
  double momentum() const { return momentum_; }
  bool initialized(int cls) const;
  std::span<const double> prototype(int cls) const;

  // First update copies e; later updates apply p <- a*p + (1-a)*e.
  void update(int cls, std::span<const double> embedding);

  // Nearest initialized prototype of a different class (euclidean, lowest
  // index on ties); nullopt when no eligible negative exists.
  std::optional<int> hard_negative(std::span<const double> embedding,
                                   int true_class) const;

 private:
  int num_classes_, dim_;
  double momentum_;
  std::vector<double> rows_;
  std::vector<bool> initialized_;
};

// max(0, d(e,p+) - d(e,p-) + margin), euclidean distances.
double clp_triplet_loss(std::span<const double> embedding,
                        std::span<const double> positive,
                        std::span<const double> negative, double margin);

// Same loss plus the (sub)gradient with respect to the embedding.
double clp_triplet_loss_grad(std::span<const double> embedding,
                             std::span<const double> positive,
                             std::span<const double> negative, double margin,
                             std::span<double> grad_embedding);

// Confidence-thresholded hard consistency: below tau -> (0, false), otherwise
// cross-entropy of the student against the teacher's argmax.
std::pair<double, bool> tcr_loss(std::span<const double> teacher_probs,
                                 std::span<const double> student_probs,
                                 double tau);

struct SemiVtConfig {
  models::ModelConfig model;
  models::TrainConfig train;
  augment::AugmentSpec augment;     // student-side strong augmentation
  double prototype_momentum = 0.9;  // alpha
  double margin = 0.2;
  double tau = 0.8;
  double lambda_clp = 1.0;
  double lambda_tcr = 1.0;
  double teacher_momentum = 0.99;   // EMA of student weights
  int short_window = 0;             // 0 = auto
  uint64_t seed = 1;
};

struct EpochReport {
  int epoch = 0;
  double loss_sup = 0.0;
  double loss_clp = 0.0;
  double loss_tcr = 0.0;
  double tcr_pass_fraction = 0.0;
  double val_accuracy = 0.0;

  std::string to_json() const;
};

struct SemiVtResult {
  models::ClipClassifier student;
  std::vector<EpochReport> epochs;
};

// Dual-stream teacher-student training. With lambda_clp = lambda_tcr = 0 the
// parameter trajectory replays train_supervised bit-exactly for the same
// seed.
SemiVtResult train_semivt(std::span<const models::LabeledClip> labeled,
                          std::span<const core::VideoClip* const> unlabeled,
                          std::span<const models::LabeledClip> val_set,
                          const core::LabelSpace& label_space,
                          const SemiVtConfig& config);

}  // namespace sslv::semivt
