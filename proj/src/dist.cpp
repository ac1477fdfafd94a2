#include "sslv/dist.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "sslv/sampling.hpp"

namespace sslv::dist {

CheckpointTriple CheckpointTriple::make(double p_third, double p_two_thirds,
                                        std::vector<double> p_final_vec) {
  CheckpointTriple triple;
  triple.predicted_class = core::argmax_class(p_final_vec);
  triple.p_third = p_third;
  triple.p_two_thirds = p_two_thirds;
  triple.p_final_vec = std::move(p_final_vec);
  return triple;
}

namespace {

// h(a, b) = ab / (a + b), with h := 0 when both terms vanish.
double consistency_term(double a, double b) {
  const double denom = a + b;
  if (denom == 0.0) return 0.0;
  return a * b / denom;
}

void check_unit(double v, const char* name) {
  if (!std::isfinite(v) || v < 0.0 || v > 1.0)
    throw InvalidInput(std::string("reliability_score: ") + name +
                       " must be in [0,1]");
}

}  // namespace

double reliability_score(const CheckpointTriple& triple) {
  check_unit(triple.p_third, "p_third");
  check_unit(triple.p_two_thirds, "p_two_thirds");
  if (triple.p_final_vec.empty())
    throw InvalidInput("reliability_score: empty final probability vector");
  if (triple.predicted_class < 0 ||
      triple.predicted_class >= static_cast<int>(triple.p_final_vec.size()))
    throw InvalidInput("reliability_score: predicted_class out of range");
  const double pf = triple.p_final_vec[static_cast<size_t>(triple.predicted_class)];
  check_unit(pf, "final probability");
  return (consistency_term(triple.p_third, pf) +
          2.0 * consistency_term(triple.p_two_thirds, pf)) /
         3.0;
}

std::vector<std::string> retain_top_half(
    const std::vector<std::pair<std::string, double>>& scored) {
  if (scored.empty()) throw InvalidInput("retain_top_half: empty input");
  std::vector<std::pair<std::string, double>> sorted(scored.begin(), scored.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const size_t keep = (sorted.size() + 1) / 2;
  std::vector<std::string> retained;
  retained.reserve(keep);
  for (size_t i = 0; i < keep; ++i) retained.push_back(sorted[i].first);
  return retained;
}

bool temporal_invariance_check(const core::Prediction& pred_view_a,
                               const core::Prediction& pred_view_b) {
  if (pred_view_a.probs.size() != pred_view_b.probs.size())
    throw InvalidInput("invariance check: label-space mismatch");
  return pred_view_a.predicted_class == pred_view_b.predicted_class;
}

bool transformation_invariance_check(const core::Prediction& pred_weak,
                                     const core::Prediction& pred_strong) {
  return temporal_invariance_check(pred_weak, pred_strong);
}

bool dual_filter(const PseudoLabel& candidate) {
  return candidate.retained_by_rank && candidate.temporal_ok &&
         candidate.transform_ok;
}

namespace {

const models::Checkpoint& find_tag(std::span<const models::Checkpoint> ckpts,
                                   models::CheckpointTag tag) {
  for (const auto& c : ckpts)
    if (c.tag == tag) return c;
  throw InvalidInput(std::string("generate_pseudo_labels: missing checkpoint tag '") +
                     models::tag_name(tag) + "'");
}

}  // namespace

std::vector<PseudoLabel> generate_pseudo_labels(
    std::span<const models::Checkpoint> teacher_checkpoints,
    const models::ModelConfig& model_config,
    std::span<const core::VideoClip* const> unlabeled,
    const augment::AugmentSpec& augment_spec, uint64_t seed) {
  const auto model_third = models::load_checkpoint(
      model_config, find_tag(teacher_checkpoints, models::CheckpointTag::third));
  const auto model_two_thirds = models::load_checkpoint(
      model_config, find_tag(teacher_checkpoints, models::CheckpointTag::two_thirds));
  const auto model_final = models::load_checkpoint(
      model_config, find_tag(teacher_checkpoints, models::CheckpointTag::final));

  const int k = model_config.frames_per_view;
  std::vector<PseudoLabel> out;
  out.reserve(unlabeled.size());
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(unlabeled.size());

  for (size_t i = 0; i < unlabeled.size(); ++i) {
    const core::VideoClip& clip = *unlabeled[i];
    rng::Xoshiro256ss gen(rng::derive_seed(seed, rng::salt::kPseudo, i));

    const auto [idx_a, idx_b] = sampling::dual_temporal_views(clip.frames.t, k, gen);
    const auto view_a = core::take_view(clip, idx_a);
    const auto view_b = core::take_view(clip, idx_b);

    const auto pred_a = core::Prediction::from_probs(
        core::softmax(model_final.forward(view_a).logits));
    const auto pred_b = core::Prediction::from_probs(
        core::softmax(model_final.forward(view_b).logits));

    core::FrameView strong_view = view_a;
    strong_view.frames = augment::apply(view_a.frames, augment_spec, gen);
    const auto pred_strong = core::Prediction::from_probs(
        core::softmax(model_final.forward(strong_view).logits));

    const int label = pred_a.predicted_class;
    const double p3 = core::softmax(model_third.forward(view_a).logits)
        [static_cast<size_t>(label)];
    const double p23 = core::softmax(model_two_thirds.forward(view_a).logits)
        [static_cast<size_t>(label)];

    PseudoLabel pl;
    pl.clip_id = clip.clip_id;
    pl.label = label;
    pl.reliability =
        reliability_score(CheckpointTriple::make(p3, p23, pred_a.probs));
    pl.temporal_ok = temporal_invariance_check(pred_a, pred_b);
    pl.transform_ok = transformation_invariance_check(pred_a, pred_strong);
    scored.emplace_back(pl.clip_id, pl.reliability);
    out.push_back(std::move(pl));
  }

  if (!out.empty()) {
    const auto retained = retain_top_half(scored);
    for (auto& pl : out)
      pl.retained_by_rank =
          std::find(retained.begin(), retained.end(), pl.clip_id) != retained.end();
  }
  return out;
}

std::string StageReport::to_json() const {
  nlohmann::json j;
  j["stage"] = stage;
  j["n_pseudo"] = n_pseudo;
  j["n_accepted"] = n_accepted;
  j["pseudo_precision"] =
      std::isfinite(pseudo_precision) ? nlohmann::json(pseudo_precision)
                                      : nlohmann::json(nullptr);
  j["pseudo_precision_unfiltered"] =
      std::isfinite(pseudo_precision_unfiltered)
          ? nlohmann::json(pseudo_precision_unfiltered)
          : nlohmann::json(nullptr);
  j["student_metrics"] = nlohmann::json::parse(student_metrics.to_json());
  return j.dump();
}

namespace {

struct PseudoStage {
  std::vector<models::LabeledClip> training_set;
  StageReport report;
};

PseudoStage pseudo_label_stage(int stage,
                               const models::ClipClassifier& /*teacher*/,
                               const models::TrainResult& teacher_run,
                               std::span<const models::LabeledClip> labeled,
                               std::span<const core::VideoClip* const> unlabeled,
                               const DistConfig& config) {
  PseudoStage out;
  out.report.stage = stage;
  out.training_set.assign(labeled.begin(), labeled.end());

  if (unlabeled.empty()) {
    out.report.pseudo_precision = std::nan("");
    out.report.pseudo_precision_unfiltered = std::nan("");
    return out;
  }

  const auto pseudo = generate_pseudo_labels(
      teacher_run.checkpoints, config.model, unlabeled, config.augment,
      rng::derive_seed(config.seed, rng::salt::kPseudo, static_cast<uint64_t>(stage)));

  out.report.n_pseudo = static_cast<int>(pseudo.size());
  int accepted = 0, correct_accepted = 0, correct_all = 0, with_truth = 0,
      accepted_with_truth = 0;
  for (size_t i = 0; i < pseudo.size(); ++i) {
    const auto& pl = pseudo[i];
    const auto& truth = unlabeled[i]->label;
    if (truth.has_value()) {
      ++with_truth;
      if (pl.label == *truth) ++correct_all;
    }
    if (dual_filter(pl)) {
      ++accepted;
      out.training_set.push_back({unlabeled[i], pl.label});
      if (truth.has_value()) {
        ++accepted_with_truth;
        if (pl.label == *truth) ++correct_accepted;
      }
    }
  }
  out.report.n_accepted = accepted;
  out.report.pseudo_precision_unfiltered =
      with_truth > 0 ? static_cast<double>(correct_all) / with_truth : std::nan("");
  out.report.pseudo_precision =
      accepted_with_truth > 0
          ? static_cast<double>(correct_accepted) / accepted_with_truth
          : std::nan("");
  return out;
}

}  // namespace

namespace {

// Inverse-frequency class weights keep the student honest when the accepted
// pseudo-labels are class-skewed (a real hazard of global top-half ranking).
std::vector<double> balance_weights(std::span<const models::LabeledClip> set,
                                    int num_classes) {
  std::vector<double> counts(static_cast<size_t>(num_classes), 0.0);
  for (const auto& item : set) counts[static_cast<size_t>(item.label)] += 1.0;
  std::vector<double> weights(static_cast<size_t>(num_classes), 1.0);
  const double total = static_cast<double>(set.size());
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<size_t>(c)] > 0.0)
      weights[static_cast<size_t>(c)] =
          total / (num_classes * counts[static_cast<size_t>(c)]);
  }
  return weights;
}

}  // namespace

DistResult run_dist(std::span<const models::LabeledClip> labeled,
                    std::span<const core::VideoClip* const> unlabeled,
                    std::span<const models::LabeledClip> eval_set,
                    const core::LabelSpace& label_space,
                    const DistConfig& config) {
  if (labeled.empty()) throw InvalidInput("run_dist: empty labeled set");

  const uint64_t init_seed = rng::derive_seed(config.seed, rng::salt::kInit);
  models::TrainConfig train_cfg = config.train;
  train_cfg.seed = config.seed;

  // Stage 1: teacher on labeled data only.
  models::ClipClassifier teacher(config.model, init_seed);
  auto teacher_run = models::train_supervised(teacher, labeled, train_cfg);

  auto stage1 = pseudo_label_stage(1, teacher, teacher_run, labeled, unlabeled, config);
  models::TrainConfig student_cfg = train_cfg;
  if (stage1.report.n_accepted > 0)
    student_cfg.class_weights =
        balance_weights(stage1.training_set, config.model.num_classes);
  models::ClipClassifier student1(config.model, init_seed);
  auto student1_run =
      models::train_supervised(student1, stage1.training_set, student_cfg);
  stage1.report.student_metrics =
      models::evaluate_clips(student1, eval_set, label_space);

  // Stage 2: the student becomes the teacher and the process repeats.
  auto stage2 = pseudo_label_stage(2, student1, student1_run, labeled, unlabeled, config);
  student_cfg = train_cfg;
  if (stage2.report.n_accepted > 0)
    student_cfg.class_weights =
        balance_weights(stage2.training_set, config.model.num_classes);
  models::ClipClassifier student2(config.model, init_seed);
  models::train_supervised(student2, stage2.training_set, student_cfg);
  stage2.report.student_metrics =
      models::evaluate_clips(student2, eval_set, label_space);

  DistResult result{.stages = {stage1.report, stage2.report},
                    .student = std::move(student2)};
  return result;
}

}  // namespace sslv::dist
