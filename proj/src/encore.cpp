#include "sslv/encore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "sslv/rng.hpp"

namespace sslv::encore {

ThresholdProfile ThresholdProfile::fixed_uniform(int num_classes,
                                                 double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidInput("ThresholdProfile: threshold must be in (0,1)");
  ThresholdProfile profile;
  profile.per_class_threshold.assign(static_cast<size_t>(num_classes), threshold);
  profile.source = ProfileSource::fixed;
  return profile;
}

double ThresholdProfile::mean_threshold() const {
  if (per_class_threshold.empty()) return 0.0;
  return std::accumulate(per_class_threshold.begin(), per_class_threshold.end(),
                         0.0) /
         static_cast<double>(per_class_threshold.size());
}

std::vector<std::vector<double>> collect_tp_confidences(
    std::span<const core::SegPrediction> seg_preds,
    std::span<const std::vector<int>> gt_masks, int num_classes) {
  if (seg_preds.size() != gt_masks.size())
    throw InvalidInput("collect_tp_confidences: prediction/mask count mismatch");
  std::vector<std::vector<double>> confidences(static_cast<size_t>(num_classes));
  for (size_t i = 0; i < seg_preds.size(); ++i) {
    const auto& pred = seg_preds[i];
    const auto& gt = gt_masks[i];
    const size_t plane = static_cast<size_t>(pred.h) * pred.w;
    if (gt.size() != plane)
      throw InvalidInput("collect_tp_confidences: mask shape mismatch");
    for (size_t px = 0; px < plane; ++px) {
      const int cls = pred.argmax_mask[px];
      if (cls == gt[px] && cls < num_classes)
        confidences[static_cast<size_t>(cls)].push_back(
            pred.probs[static_cast<size_t>(cls) * plane + px]);
    }
  }
  return confidences;
}

ThresholdProfile cac_thresholds(
    const std::vector<std::vector<double>>& tp_confidences, double percentile_q,
    double fallback_t0) {
  if (!(percentile_q >= 0.0 && percentile_q <= 100.0))
    throw InvalidInput("cac_thresholds: percentile out of [0,100]");
  ThresholdProfile profile;
  profile.source = ProfileSource::cac;
  profile.percentile_q = percentile_q;
  profile.per_class_threshold.reserve(tp_confidences.size());
  for (const auto& list : tp_confidences) {
    if (list.empty()) {
      profile.per_class_threshold.push_back(fallback_t0);
    } else {
      profile.per_class_threshold.push_back(core::percentile(list, percentile_q));
    }
  }
  return profile;
}

PseudoMask generate_pseudo_mask(const core::SegPrediction& seg_pred,
                                const ThresholdProfile& profile,
                                std::string source_frame_id) {
  if (profile.per_class_threshold.size() !=
      static_cast<size_t>(seg_pred.num_classes))
    throw InvalidInput("generate_pseudo_mask: profile class count mismatch");
  const size_t plane = static_cast<size_t>(seg_pred.h) * seg_pred.w;
  PseudoMask out;
  out.source_frame_id = std::move(source_frame_id);
  out.mask.assign(plane, kIgnore);
  size_t accepted = 0;
  for (size_t px = 0; px < plane; ++px) {
    const int cls = seg_pred.argmax_mask[px];
    const double p = seg_pred.probs[static_cast<size_t>(cls) * plane + px];
    if (p >= profile.per_class_threshold[static_cast<size_t>(cls)]) {
      out.mask[px] = cls;
      ++accepted;
    }
  }
  out.accepted_pixel_fraction =
      static_cast<double>(accepted) / static_cast<double>(plane);
  return out;
}

double mean_foreground_dice(std::span<const int> pseudo_mask,
                            std::span<const int> gt_mask, int num_classes) {
  if (pseudo_mask.size() != gt_mask.size())
    throw InvalidInput("mean_foreground_dice: shape mismatch");
  double sum = 0.0;
  int classes = 0;
  for (int cls = 1; cls < num_classes; ++cls) {
    sum += core::dice_score(pseudo_mask, gt_mask, cls);
    ++classes;
  }
  return classes > 0 ? sum / classes : 0.0;
}

ActSelection act_select(std::span<const ThresholdProfile> candidates,
                        std::span<const core::SegPrediction> val_preds,
                        std::span<const std::vector<int>> val_gts) {
  if (candidates.empty()) throw InvalidInput("act_select: no candidates");
  if (val_preds.empty() || val_preds.size() != val_gts.size())
    throw InvalidInput("act_select: empty or mismatched validation batch");
  const int num_classes = val_preds[0].num_classes;

  ActSelection selection;
  selection.mean_dice.reserve(candidates.size());
  for (size_t c = 0; c < candidates.size(); ++c) {
    double dice_sum = 0.0;
    for (size_t i = 0; i < val_preds.size(); ++i) {
      const auto pm = generate_pseudo_mask(val_preds[i], candidates[c]);
      dice_sum += mean_foreground_dice(pm.mask, val_gts[i], num_classes);
    }
    selection.mean_dice.push_back(dice_sum / static_cast<double>(val_preds.size()));
  }
  int best = 0;
  for (size_t c = 1; c < candidates.size(); ++c) {
    const double delta = selection.mean_dice[c] - selection.mean_dice[best];
    if (delta > 0.0 ||
        (delta == 0.0 && candidates[c].mean_threshold() <
                             candidates[static_cast<size_t>(best)].mean_threshold()))
      best = static_cast<int>(c);
  }
  selection.best = candidates[static_cast<size_t>(best)];
  selection.best_index = best;
  return selection;
}

void write_pgm(const std::vector<int>& mask, int height, int width,
               const std::string& path) {
  if (mask.size() != static_cast<size_t>(height) * width)
    throw InvalidInput("write_pgm: mask size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("write_pgm: cannot open " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  for (int v : mask) {
    const unsigned char byte = static_cast<unsigned char>(
        v < 0 || v > 255 ? 255 : v);
    out.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

std::string RecalibEvent::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["adopted_index"] = adopted_index;
  j["candidates"] = nlohmann::json::array();
  for (const auto& cand : candidates) {
    nlohmann::json c;
    c["thresholds"] = cand.profile.per_class_threshold;
    c["mean_dice"] = cand.mean_dice;
    c["accepted_fraction"] = cand.accepted_fraction;
    j["candidates"].push_back(std::move(c));
  }
  return j.dump();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

double seg_loss_and_dlogits(const std::vector<double>& probs,
                            const std::vector<int>& target, int num_classes,
                            int h, int w, double dice_weight,
                            std::vector<double>& dlogits) {
  const size_t plane = static_cast<size_t>(h) * w;
  dlogits.assign(static_cast<size_t>(num_classes) * plane, 0.0);

  // Cross-entropy, ignoring sentinel pixels.
  size_t counted = 0;
  double ce = 0.0;
  for (size_t px = 0; px < plane; ++px)
    if (target[px] != kIgnore) ++counted;
  const double inv_count = counted > 0 ? 1.0 / static_cast<double>(counted) : 0.0;
  for (size_t px = 0; px < plane; ++px) {
    const int t = target[px];
    if (t == kIgnore) continue;
    const double p = std::max(probs[static_cast<size_t>(t) * plane + px], 1e-300);
    ce += -std::log(p) * inv_count;
    for (int c = 0; c < num_classes; ++c) {
      const double pc = probs[static_cast<size_t>(c) * plane + px];
      dlogits[static_cast<size_t>(c) * plane + px] +=
          (pc - (c == t ? 1.0 : 0.0)) * inv_count;
    }
  }

  if (dice_weight <= 0.0) return ce;

  // Soft Dice over counted pixels: d_c = (2*I_c + eps) / (P_c + G_c + eps).
  const double eps = 1.0;
  double dice_loss = 0.0;
  std::vector<double> inter(static_cast<size_t>(num_classes), 0.0);
  std::vector<double> psum(static_cast<size_t>(num_classes), 0.0);
  std::vector<double> gsum(static_cast<size_t>(num_classes), 0.0);
  for (size_t px = 0; px < plane; ++px) {
    const int t = target[px];
    if (t == kIgnore) continue;
    for (int c = 0; c < num_classes; ++c) {
      const double pc = probs[static_cast<size_t>(c) * plane + px];
      const double gc = c == t ? 1.0 : 0.0;
      inter[static_cast<size_t>(c)] += pc * gc;
      psum[static_cast<size_t>(c)] += pc;
      gsum[static_cast<size_t>(c)] += gc;
    }
  }
  std::vector<double> d_dprob_scale_num(static_cast<size_t>(num_classes));
  std::vector<double> d_dprob_scale_den(static_cast<size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const double num = 2.0 * inter[static_cast<size_t>(c)] + eps;
    const double den = psum[static_cast<size_t>(c)] + gsum[static_cast<size_t>(c)] + eps;
    dice_loss += 1.0 - num / den;
    // d(1 - num/den)/dp = -(2*g*den - num) / den^2
    d_dprob_scale_num[static_cast<size_t>(c)] = num;
    d_dprob_scale_den[static_cast<size_t>(c)] = den;
  }
  dice_loss /= num_classes;

  // Chain through per-pixel softmax: dlogit_c = p_c * (dprob_c - sum_j p_j dprob_j).
  const double scale = dice_weight / num_classes;
  for (size_t px = 0; px < plane; ++px) {
    const int t = target[px];
    if (t == kIgnore) continue;
    double dot = 0.0;
    double dprob[16];
    for (int c = 0; c < num_classes; ++c) {
      const double num = d_dprob_scale_num[static_cast<size_t>(c)];
      const double den = d_dprob_scale_den[static_cast<size_t>(c)];
      const double gc = c == t ? 1.0 : 0.0;
      dprob[c] = -scale * (2.0 * gc * den - num) / (den * den);
      dot += probs[static_cast<size_t>(c) * plane + px] * dprob[c];
    }
    for (int c = 0; c < num_classes; ++c) {
      dlogits[static_cast<size_t>(c) * plane + px] +=
          probs[static_cast<size_t>(c) * plane + px] * (dprob[c] - dot);
    }
  }
  return ce + dice_weight * dice_loss;
}

namespace {

std::vector<core::SegPrediction> predict_all(
    const models::SegmentationNet& model,
    std::span<const data::SegSample* const> samples) {
  std::vector<core::SegPrediction> preds;
  preds.reserve(samples.size());
  for (const auto* sample : samples) preds.push_back(model.forward(sample->image));
  return preds;
}

}  // namespace

EncoreResult train_encore(std::span<const data::SegSample* const> labeled,
                          std::span<const data::SegSample* const> unlabeled,
                          const EncoreConfig& config) {
  if (labeled.empty()) throw InvalidInput("train_encore: empty labeled set");
  if (config.epochs < 1) throw InvalidInput("train_encore: epochs must be >= 1");
  if (config.model.num_classes > 16)
    throw InvalidInput("train_encore: at most 16 classes supported");
  if (!(config.calib_fraction > 0.0 && config.calib_fraction < 1.0))
    throw InvalidInput("train_encore: calib_fraction must be in (0,1)");

  const int num_classes = config.model.num_classes;
  const int h = config.model.height, w = config.model.width;

  // Deterministic held-out calibration split of the labeled set.
  std::vector<size_t> labeled_order(labeled.size());
  std::iota(labeled_order.begin(), labeled_order.end(), 0);
  {
    rng::Xoshiro256ss gen(rng::derive_seed(config.seed, rng::salt::kCalib));
    gen.shuffle(labeled_order.data(), labeled_order.size());
  }
  size_t n_calib = static_cast<size_t>(
      std::floor(config.calib_fraction * static_cast<double>(labeled.size())));
  n_calib = std::min(std::max<size_t>(1, n_calib),
                     labeled.size() > 1 ? labeled.size() - 1 : 1);
  std::vector<const data::SegSample*> train_labeled, calib;
  for (size_t i = 0; i < labeled_order.size(); ++i) {
    if (i < labeled_order.size() - n_calib)
      train_labeled.push_back(labeled[labeled_order[i]]);
    else
      calib.push_back(labeled[labeled_order[i]]);
  }
  if (train_labeled.empty()) train_labeled = calib;  // single-frame labeled set

  models::SegmentationNet model(config.model,
                                rng::derive_seed(config.seed, rng::salt::kInit));
  std::vector<double> params(model.parameters().begin(), model.parameters().end());
  std::vector<double> grad(params.size(), 0.0);
  models::engine::OptimizerState opt;

  rng::Xoshiro256ss rng_batch(rng::derive_seed(config.seed, rng::salt::kBatch));

  ThresholdProfile adopted = ThresholdProfile::fixed_uniform(
      num_classes, config.adaptive ? config.initial_threshold
                                   : config.fixed_threshold);

  EncoreResult result{std::move(model), {}, {}};
  models::SegmentationNet& net = result.model;

  auto run_batch = [&](std::span<const data::SegSample* const> batch,
                       const std::vector<const std::vector<int>*>& targets,
                       double weight) -> double {
    double loss = 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);
    std::vector<double> sample_dlogits;
    for (size_t i = 0; i < batch.size(); ++i) {
      auto trace = net.make_trace();
      const auto probs = net.forward_traced(batch[i]->image, *trace);
      loss += seg_loss_and_dlogits(probs, *targets[i], num_classes, h, w,
                                   config.dice_loss_weight, sample_dlogits);
      const double scale = weight / static_cast<double>(batch.size());
      for (double& v : sample_dlogits) v *= scale;
      net.backward(*trace, sample_dlogits, grad);
    }
    models::engine::optimizer_step(params, grad, opt, config.optimizer, config.lr, config.momentum);
    net.set_parameters(params);
    return loss / static_cast<double>(batch.size());
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    size_t n_batches = 0;

    // Supervised pass over the labeled training split.
    const auto order = models::engine::shuffled_order(train_labeled.size(), rng_batch);
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch_size)) {
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<const data::SegSample*> batch;
      std::vector<const std::vector<int>*> targets;
      for (size_t i = start; i < end; ++i) {
        batch.push_back(train_labeled[static_cast<size_t>(order[i])]);
        targets.push_back(&batch.back()->mask);
      }
      epoch_loss += run_batch(batch, targets, 1.0);
      ++n_batches;
    }

    // Self-training pass over unlabeled frames with the adopted profile.
    if (!unlabeled.empty() && config.unsup_weight > 0.0) {
      const auto ul_order =
          models::engine::shuffled_order(unlabeled.size(), rng_batch);
      std::vector<std::vector<int>> pseudo_targets;
      for (size_t start = 0; start < ul_order.size();
           start += static_cast<size_t>(config.batch_size)) {
        const size_t end = std::min(ul_order.size(),
                                    start + static_cast<size_t>(config.batch_size));
        std::vector<const data::SegSample*> batch;
        pseudo_targets.clear();
        pseudo_targets.reserve(end - start);
        for (size_t i = start; i < end; ++i) {
          const auto* sample = unlabeled[static_cast<size_t>(ul_order[i])];
          const auto pred = net.forward(sample->image);
          pseudo_targets.push_back(generate_pseudo_mask(pred, adopted, sample->id).mask);
          batch.push_back(sample);
        }
        std::vector<const std::vector<int>*> targets;
        for (const auto& t : pseudo_targets) targets.push_back(&t);
        run_batch(batch, targets, config.unsup_weight);
        ++n_batches;
      }
    }
    result.loss_curve.push_back(epoch_loss /
                                static_cast<double>(std::max<size_t>(1, n_batches)));

    // Recalibration event.
    if (config.adaptive && config.recalib_period > 0 &&
        epoch % config.recalib_period == 0) {
      const auto train_preds = predict_all(net, train_labeled);
      std::vector<std::vector<int>> train_gts;
      for (const auto* s : train_labeled) train_gts.push_back(s->mask);
      const auto tp = collect_tp_confidences(train_preds, train_gts, num_classes);

      std::vector<ThresholdProfile> candidates;
      for (double q : config.percentiles)
        candidates.push_back(cac_thresholds(tp, q, config.fallback_t0));
      if (!config.offsets.empty() && !candidates.empty()) {
        const ThresholdProfile base = candidates.front();
        for (double delta : config.offsets) {
          ThresholdProfile shifted = base;
          for (double& t : shifted.per_class_threshold)
            t = std::min(1.0 - 1e-9, std::max(1e-9, t + delta));
          candidates.push_back(std::move(shifted));
        }
      }
      for (double t : config.fixed_candidates)
        candidates.push_back(ThresholdProfile::fixed_uniform(num_classes, t));

      const auto calib_preds = predict_all(net, calib);
      std::vector<std::vector<int>> calib_gts;
      for (const auto* s : calib) calib_gts.push_back(s->mask);
      auto selection = act_select(candidates, calib_preds, calib_gts);
      selection.best.source = ProfileSource::act;
      selection.best.candidate_grid.clear();
      for (const auto& cand : candidates)
        selection.best.candidate_grid.push_back(cand.mean_threshold());

      RecalibEvent event;
      event.epoch = epoch;
      event.adopted_index = selection.best_index;
      for (size_t c = 0; c < candidates.size(); ++c) {
        CandidateEval eval;
        eval.profile = candidates[c];
        eval.mean_dice = selection.mean_dice[c];
        double accepted = 0.0;
        for (const auto& pred : calib_preds)
          accepted += generate_pseudo_mask(pred, candidates[c]).accepted_pixel_fraction;
        eval.accepted_fraction = accepted / static_cast<double>(calib_preds.size());
        event.candidates.push_back(std::move(eval));
      }
      result.events.push_back(std::move(event));
      adopted = selection.best;
    }
  }
  return result;
}

double evaluate_seg(const models::SegmentationNet& model,
                    std::span<const data::SegSample* const> samples) {
  if (samples.empty()) throw InvalidInput("evaluate_seg: empty sample set");
  const int num_classes = model.config().num_classes;
  std::vector<int> all_pred, all_gt;
  for (const auto* sample : samples) {
    const auto pred = model.forward(sample->image);
    all_pred.insert(all_pred.end(), pred.argmax_mask.begin(), pred.argmax_mask.end());
    all_gt.insert(all_gt.end(), sample->mask.begin(), sample->mask.end());
  }
  double sum = 0.0;
  int classes = 0;
  for (int cls = 1; cls < num_classes; ++cls) {
    sum += core::dice_score(all_pred, all_gt, cls);
    ++classes;
  }
  return classes > 0 ? sum / classes : 0.0;
}

}  // namespace sslv::encore
