#include "sslv/semivt.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "sslv/sampling.hpp"

namespace sslv::semivt {

PrototypeStore::PrototypeStore(int num_classes, int dim, double momentum)
    : num_classes_(num_classes), dim_(dim), momentum_(momentum),
      rows_(static_cast<size_t>(num_classes) * dim, 0.0),
      initialized_(static_cast<size_t>(num_classes), false) {
  if (num_classes < 2) throw InvalidInput("PrototypeStore: num_classes must be >= 2");
  if (dim < 1) throw InvalidInput("PrototypeStore: dim must be >= 1");
  if (!(momentum > 0.0 && momentum < 1.0))
    throw InvalidInput("PrototypeStore: momentum must be in (0,1)");
}

bool PrototypeStore::initialized(int cls) const {
  if (cls < 0 || cls >= num_classes_)
    throw InvalidInput("PrototypeStore: class out of range");
  return initialized_[static_cast<size_t>(cls)];
}

std::span<const double> PrototypeStore::prototype(int cls) const {
  if (cls < 0 || cls >= num_classes_)
    throw InvalidInput("PrototypeStore: class out of range");
  return {rows_.data() + static_cast<size_t>(cls) * dim_,
          static_cast<size_t>(dim_)};
}

void PrototypeStore::update(int cls, std::span<const double> embedding) {
  if (cls < 0 || cls >= num_classes_)
    throw InvalidInput("PrototypeStore: class out of range");
  if (embedding.size() != static_cast<size_t>(dim_))
    throw InvalidInput("PrototypeStore: embedding dimension mismatch");
  for (double v : embedding)
    if (!std::isfinite(v)) throw InvalidInput("PrototypeStore: non-finite embedding");
  double* row = rows_.data() + static_cast<size_t>(cls) * dim_;
  if (!initialized_[static_cast<size_t>(cls)]) {
    std::copy(embedding.begin(), embedding.end(), row);
    initialized_[static_cast<size_t>(cls)] = true;
    return;
  }
  for (int i = 0; i < dim_; ++i)
    row[i] = momentum_ * row[i] + (1.0 - momentum_) * embedding[i];
}

std::optional<int> PrototypeStore::hard_negative(std::span<const double> embedding,
                                                 int true_class) const {
  if (embedding.size() != static_cast<size_t>(dim_))
    throw InvalidInput("PrototypeStore: embedding dimension mismatch");
  std::optional<int> best;
  double best_dist2 = 0.0;
  for (int cls = 0; cls < num_classes_; ++cls) {
    if (cls == true_class || !initialized_[static_cast<size_t>(cls)]) continue;
    const double* row = rows_.data() + static_cast<size_t>(cls) * dim_;
    double dist2 = 0.0;
    for (int i = 0; i < dim_; ++i) {
      const double diff = embedding[i] - row[i];
      dist2 += diff * diff;
    }
    if (!best.has_value() || dist2 < best_dist2) {
      best = cls;
      best_dist2 = dist2;
    }
  }
  return best;
}

namespace {

double euclidean(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

void check_triplet_inputs(std::span<const double> e, std::span<const double> p,
                          std::span<const double> n, double margin) {
  if (e.size() != p.size() || e.size() != n.size() || e.empty())
    throw InvalidInput("clp_triplet_loss: dimension mismatch");
  if (!(margin >= 0.0)) throw InvalidInput("clp_triplet_loss: margin must be >= 0");
  for (size_t i = 0; i < e.size(); ++i) {
    if (!std::isfinite(e[i]) || !std::isfinite(p[i]) || !std::isfinite(n[i]))
      throw InvalidInput("clp_triplet_loss: non-finite input");
  }
}

}  // namespace

double clp_triplet_loss(std::span<const double> embedding,
                        std::span<const double> positive,
                        std::span<const double> negative, double margin) {
  check_triplet_inputs(embedding, positive, negative, margin);
  const double d_pos = euclidean(embedding, positive);
  const double d_neg = euclidean(embedding, negative);
  return std::max(0.0, d_pos - d_neg + margin);
}

double clp_triplet_loss_grad(std::span<const double> embedding,
                             std::span<const double> positive,
                             std::span<const double> negative, double margin,
                             std::span<double> grad_embedding) {
  check_triplet_inputs(embedding, positive, negative, margin);
  if (grad_embedding.size() != embedding.size())
    throw InvalidInput("clp_triplet_loss_grad: gradient buffer size mismatch");
  const double d_pos = euclidean(embedding, positive);
  const double d_neg = euclidean(embedding, negative);
  const double loss = d_pos - d_neg + margin;
  std::fill(grad_embedding.begin(), grad_embedding.end(), 0.0);
  if (loss <= 0.0) return 0.0;  // subgradient 0 at and beyond the hinge
  for (size_t i = 0; i < embedding.size(); ++i) {
    double g = 0.0;
    if (d_pos > 0.0) g += (embedding[i] - positive[i]) / d_pos;
    if (d_neg > 0.0) g -= (embedding[i] - negative[i]) / d_neg;
    grad_embedding[i] = g;
  }
  return loss;
}

std::pair<double, bool> tcr_loss(std::span<const double> teacher_probs,
                                 std::span<const double> student_probs,
                                 double tau) {
  if (teacher_probs.size() != student_probs.size() || teacher_probs.empty())
    throw InvalidInput("tcr_loss: label-space mismatch");
  auto check = [](std::span<const double> probs) {
    double sum = 0.0;
    for (double p : probs) {
      if (!std::isfinite(p) || p < 0.0)
        throw InvalidInput("tcr_loss: invalid probability vector");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw InvalidInput("tcr_loss: probabilities must sum to 1");
  };
  check(teacher_probs);
  check(student_probs);
  const int hard = core::argmax_class(teacher_probs);
  if (teacher_probs[static_cast<size_t>(hard)] < tau) return {0.0, false};
  const double p = std::max(student_probs[static_cast<size_t>(hard)], 1e-300);
  return {-std::log(p), true};
}

std::string EpochReport::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["loss_sup"] = loss_sup;
  j["loss_clp"] = loss_clp;
  j["loss_tcr"] = loss_tcr;
  j["tcr_pass_fraction"] = tcr_pass_fraction;
  j["val_accuracy"] = std::isfinite(val_accuracy) ? nlohmann::json(val_accuracy)
                                                  : nlohmann::json(nullptr);
  return j.dump();
}

namespace {

// Gradient of L(e / ||e||) given dL/d(e_normalized).
void chain_through_normalization(std::span<const double> raw,
                                 std::span<const double> normalized, double norm,
                                 std::span<const double> d_normalized,
                                 std::span<double> d_raw) {
  double dot = 0.0;
  for (size_t i = 0; i < raw.size(); ++i) dot += d_normalized[i] * normalized[i];
  for (size_t i = 0; i < raw.size(); ++i)
    d_raw[i] = (d_normalized[i] - dot * normalized[i]) / norm;
}

class UnlabeledCycle {
 public:
  UnlabeledCycle(size_t n, uint64_t seed)
      : order_(n), gen_(seed) {
    for (size_t i = 0; i < n; ++i) order_[i] = i;
    reshuffle();
  }

  size_t next() {
    if (pos_ >= order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    gen_.shuffle(order_.data(), order_.size());
    pos_ = 0;
  }

  std::vector<size_t> order_;
  rng::Xoshiro256ss gen_;
  size_t pos_ = 0;
};

}  // namespace

SemiVtResult train_semivt(std::span<const models::LabeledClip> labeled,
                          std::span<const core::VideoClip* const> unlabeled,
                          std::span<const models::LabeledClip> val_set,
                          const core::LabelSpace& label_space,
                          const SemiVtConfig& config) {
  if (labeled.empty()) throw InvalidInput("train_semivt: empty labeled set");
  if (!(config.tau > 0.0 && config.tau <= 1.0))
    throw InvalidInput("train_semivt: tau must be in (0,1]");
  if (config.lambda_clp < 0.0 || config.lambda_tcr < 0.0)
    throw InvalidInput("train_semivt: loss weights must be >= 0");
  if (!(config.teacher_momentum > 0.0 && config.teacher_momentum < 1.0))
    throw InvalidInput("train_semivt: teacher momentum must be in (0,1)");

  const models::TrainConfig& tc = config.train;
  const int d = config.model.embed_dim;
  const int k = config.model.frames_per_view;
  const bool use_clp = config.lambda_clp > 0.0;
  const bool use_tcr = config.lambda_tcr > 0.0 && !unlabeled.empty();

  models::ClipClassifier student(config.model,
                                 rng::derive_seed(config.seed, rng::salt::kInit));
  std::vector<double> params(student.parameters().begin(),
                             student.parameters().end());
  std::vector<double> grad(params.size(), 0.0);
  models::engine::OptimizerState opt;

  // Supervised streams match train_supervised for the shared seed.
  rng::Xoshiro256ss rng_batch(rng::derive_seed(tc.seed, rng::salt::kBatch));
  rng::Xoshiro256ss rng_view(rng::derive_seed(tc.seed, rng::salt::kView));

  PrototypeStore prototypes(config.model.num_classes, d, config.prototype_momentum);

  // Teacher machinery only exists when TCR is active.
  std::vector<double> teacher_params;
  std::unique_ptr<models::ClipClassifier> teacher;
  std::unique_ptr<UnlabeledCycle> ul_cycle;
  std::unique_ptr<rng::Xoshiro256ss> rng_ul_view, rng_ul_aug;
  if (use_tcr) {
    teacher_params = params;
    teacher = std::make_unique<models::ClipClassifier>(student);
    ul_cycle = std::make_unique<UnlabeledCycle>(
        unlabeled.size(), rng::derive_seed(config.seed, rng::salt::kUnlabeled));
    rng_ul_view = std::make_unique<rng::Xoshiro256ss>(
        rng::derive_seed(config.seed, rng::salt::kUlView));
    rng_ul_aug = std::make_unique<rng::Xoshiro256ss>(
        rng::derive_seed(config.seed, rng::salt::kUlAugment));
  }

  SemiVtResult result{std::move(student), {}};
  models::ClipClassifier& model = result.student;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto order = models::engine::shuffled_order(labeled.size(), rng_batch);
    double sup_sum = 0.0, clp_sum = 0.0, tcr_sum = 0.0;
    size_t tcr_counted = 0, tcr_attempted = 0, n_batches = 0;

    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(tc.batch_size)) {
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(tc.batch_size));
      std::vector<models::LabeledClip> batch;
      std::vector<std::vector<int>> views;
      for (size_t i = start; i < end; ++i) {
        const auto& item = labeled[static_cast<size_t>(order[i])];
        batch.push_back(item);
        views.push_back(models::engine::draw_training_view(
            item.clip->frames.t, k, tc.view_strategy, rng_view));
      }
      std::fill(grad.begin(), grad.end(), 0.0);

      double clp_batch = 0.0;
      models::engine::BatchEmbeddingHook hook;
      if (use_clp) {
        hook = [&](std::span<const std::vector<double>> embeddings,
                   std::span<const int> labels,
                   std::vector<std::vector<double>>& dembedding) -> double {
          const size_t n = embeddings.size();
          std::vector<std::vector<double>> normalized(n);
          std::vector<double> norms(n, 0.0);
          // Prototypes absorb the whole batch before any triplet is scored.
          for (size_t i = 0; i < n; ++i) {
            double norm2 = 0.0;
            for (double v : embeddings[i]) norm2 += v * v;
            norms[i] = std::sqrt(norm2);
            if (norms[i] == 0.0) continue;
            normalized[i].resize(embeddings[i].size());
            for (size_t j = 0; j < embeddings[i].size(); ++j)
              normalized[i][j] = embeddings[i][j] / norms[i];
            prototypes.update(labels[i], normalized[i]);
          }
          double loss_sum = 0.0;
          size_t counted = 0;
          std::vector<double> d_norm(static_cast<size_t>(d));
          std::vector<double> d_raw(static_cast<size_t>(d));
          for (size_t i = 0; i < n; ++i) {
            if (norms[i] == 0.0) continue;
            const auto negative = prototypes.hard_negative(normalized[i], labels[i]);
            if (!negative.has_value()) continue;
            const double loss = clp_triplet_loss_grad(
                normalized[i], prototypes.prototype(labels[i]),
                prototypes.prototype(*negative), config.margin, d_norm);
            ++counted;
            loss_sum += loss;
            if (loss > 0.0) {
              chain_through_normalization(embeddings[i], normalized[i], norms[i],
                                          d_norm, d_raw);
              for (size_t j = 0; j < dembedding[i].size(); ++j)
                dembedding[i][j] += config.lambda_clp * d_raw[j];
            }
          }
          const double denom = static_cast<double>(std::max<size_t>(1, counted));
          for (size_t i = 0; i < n; ++i)
            for (double& v : dembedding[i]) v /= denom;
          clp_batch = loss_sum / denom;
          return config.lambda_clp * clp_batch;
        };
      }

      const double total_sup_clp = models::engine::labeled_batch_loss_and_grad(
          model, batch, views, grad, hook, tc.class_weights);
      const double sup_batch = total_sup_clp - config.lambda_clp * clp_batch;
      sup_sum += sup_batch;
      clp_sum += clp_batch;

      if (use_tcr) {
        teacher->set_parameters(teacher_params);
        const size_t ul_batch = std::min(batch.size(), unlabeled.size());
        struct UlSample {
          models::ClipClassifier::TracePtr trace;
          std::vector<double> dlogits;
        };
        std::vector<UlSample> counted_samples;
        double tcr_batch_sum = 0.0;
        for (size_t i = 0; i < ul_batch; ++i) {
          const core::VideoClip& clip = *unlabeled[ul_cycle->next()];
          const int w = config.short_window > 0
                            ? config.short_window
                            : sampling::default_short_window(clip.frames.t, k);
          const auto [long_idx, short_idx] =
              sampling::long_short_sample(clip.frames.t, k, w, *rng_ul_view);
          const auto teacher_out =
              teacher->forward(core::take_view(clip, long_idx));
          const auto teacher_probs = core::softmax(teacher_out.logits);

          auto short_view = core::take_view(clip, short_idx);
          short_view.frames =
              augment::apply(short_view.frames, config.augment, *rng_ul_aug);
          auto trace = model.make_trace();
          const auto student_out = model.forward_traced(short_view, *trace);
          const auto student_probs = core::softmax(student_out.logits);

          ++tcr_attempted;
          const auto [loss, counted] = tcr_loss(teacher_probs, student_probs,
                                                config.tau);
          if (!counted) continue;
          ++tcr_counted;
          tcr_batch_sum += loss;
          UlSample sample;
          sample.trace = std::move(trace);
          sample.dlogits.assign(student_probs.begin(), student_probs.end());
          sample.dlogits[static_cast<size_t>(core::argmax_class(teacher_probs))] -= 1.0;
          counted_samples.push_back(std::move(sample));
        }
        if (!counted_samples.empty()) {
          const double denom = static_cast<double>(counted_samples.size());
          for (auto& sample : counted_samples) {
            for (double& v : sample.dlogits) v *= config.lambda_tcr / denom;
            model.backward(*sample.trace, sample.dlogits, {}, grad);
          }
          tcr_sum += tcr_batch_sum / denom;
        }
      }

      models::engine::optimizer_step(params, grad, opt, tc.optimizer, tc.lr, tc.momentum);
      model.set_parameters(params);
      if (use_tcr) {
        for (size_t i = 0; i < params.size(); ++i)
          teacher_params[i] = config.teacher_momentum * teacher_params[i] +
                              (1.0 - config.teacher_momentum) * params[i];
      }
      ++n_batches;
    }

    EpochReport report;
    report.epoch = epoch;
    const double nb = static_cast<double>(std::max<size_t>(1, n_batches));
    report.loss_sup = sup_sum / nb;
    report.loss_clp = clp_sum / nb;
    report.loss_tcr = tcr_sum / nb;
    report.tcr_pass_fraction =
        tcr_attempted > 0 ? static_cast<double>(tcr_counted) / tcr_attempted : 0.0;
    report.val_accuracy =
        val_set.empty()
            ? std::nan("")
            : models::evaluate_clips(model, val_set, label_space).accuracy;
    result.epochs.push_back(report);
  }
  return result;
}

}  // namespace sslv::semivt
