#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sslv/core.hpp"
#include "sslv/sampling.hpp"

namespace sslv::models {

enum class HeadType { recurrent, attention, causal_tcn };

const char* head_name(HeadType head);
HeadType head_from_name(const std::string& name);

struct ModelConfig {
  int num_classes = 4;
  int frames_per_view = 8;
  int height = 32;
  int width = 32;
  int channels = 3;
  int embed_dim = 32;
  int conv1_channels = 8;
  int conv2_channels = 16;
  int attention_heads = 2;
  HeadType head = HeadType::recurrent;

  void validate() const;  // throws InvalidInput
};

struct EmbeddingOutput {
  std::vector<double> embedding;  // clip representation before the classifier
  std::vector<double> logits;
};

// Spatial conv encoder (per-frame embeddings) + temporal head + linear
// classifier. Parameters are a flat double vector kept on the float32 grid so
// checkpoints round-trip bit-exactly; all arithmetic runs in double.
class ClipClassifier {
 public:
  ClipClassifier(const ModelConfig& config, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }

  EmbeddingOutput forward(const core::FrameView& view) const;

  // Per-timestep logits (recurrent and causal_tcn heads are causal in t;
  // attention is not). Diagnostic surface, eval only.
  std::vector<std::vector<double>> forward_sequence(
      const core::FrameView& view) const;

  std::span<const double> parameters() const { return params_; }
  void set_parameters(std::span<const double> params);
  size_t num_parameters() const { return params_.size(); }

  // Training surface: forward with cached activations, then backward.
  struct Trace;
  struct TraceDeleter {
    void operator()(Trace* trace) const;
  };
  using TracePtr = std::unique_ptr<Trace, TraceDeleter>;
  TracePtr make_trace() const;
  EmbeddingOutput forward_traced(const core::FrameView& view, Trace& trace) const;
  void backward(const Trace& trace, std::span<const double> dlogits,
                std::span<const double> dembedding,
                std::span<double> grad) const;

  ~ClipClassifier();
  ClipClassifier(const ClipClassifier&);
  ClipClassifier& operator=(const ClipClassifier&);
  ClipClassifier(ClipClassifier&&) noexcept;
  ClipClassifier& operator=(ClipClassifier&&) noexcept;

 private:
  void check_view(const core::FrameView& view) const;

  ModelConfig cfg_;
  std::vector<double> params_;
  struct Layout;
  std::unique_ptr<Layout> layout_;
};

// Small encoder-decoder with one skip connection; output logits [C, H, W].
struct SegModelConfig {
  int num_classes = 3;
  int height = 32;
  int width = 32;
  int channels = 3;
  int conv1_channels = 8;
  int conv2_channels = 16;

  void validate() const;
};

class SegmentationNet {
 public:
  SegmentationNet(const SegModelConfig& config, uint64_t init_seed);

  const SegModelConfig& config() const { return cfg_; }

  core::SegPrediction forward(const core::ClipArray& image) const;

  std::span<const double> parameters() const { return params_; }
  void set_parameters(std::span<const double> params);
  size_t num_parameters() const { return params_.size(); }

  struct Trace;
  struct TraceDeleter {
    void operator()(Trace* trace) const;
  };
  using TracePtr = std::unique_ptr<Trace, TraceDeleter>;
  TracePtr make_trace() const;
  // Returns per-pixel probabilities [C, H, W] with cached activations.
  std::vector<double> forward_traced(const core::ClipArray& image,
                                     Trace& trace) const;
  // dlogits is [C, H, W].
  void backward(const Trace& trace, std::span<const double> dlogits,
                std::span<double> grad) const;

  ~SegmentationNet();
  SegmentationNet(const SegmentationNet&);
  SegmentationNet& operator=(const SegmentationNet&);
  SegmentationNet(SegmentationNet&&) noexcept;
  SegmentationNet& operator=(SegmentationNet&&) noexcept;

 private:
  SegModelConfig cfg_;
  std::vector<double> params_;
  struct Layout;
  std::unique_ptr<Layout> layout_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

enum class CheckpointTag : uint8_t { third = 0, two_thirds = 1, final = 2, other = 3 };

const char* tag_name(CheckpointTag tag);

struct Checkpoint {
  uint64_t step = 0;
  CheckpointTag tag = CheckpointTag::other;
  std::vector<float> parameters;
  std::vector<uint8_t> rng_state;  // in-memory only, not part of the file format
};

Checkpoint save_checkpoint(const ClipClassifier& model, uint64_t step,
                           CheckpointTag tag);
Checkpoint save_checkpoint(const SegmentationNet& model, uint64_t step,
                           CheckpointTag tag);
ClipClassifier load_checkpoint(const ModelConfig& config, const Checkpoint& ckpt);
SegmentationNet load_checkpoint(const SegModelConfig& config,
                                const Checkpoint& ckpt);

// On disk: magic "SSLV1", step (LE u64), tag byte, parameter count (LE u64),
// CRC32 of the payload (LE u32), then LE float32 parameters.
void write_checkpoint_file(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint_file(const std::string& path);  // IntegrityError on corruption

// ---------------------------------------------------------------------------
// Supervised training
// ---------------------------------------------------------------------------

struct LabeledClip {
  const core::VideoClip* clip = nullptr;
  int label = -1;
};

enum class Optimizer { sgd, adam };

const char* optimizer_name(Optimizer opt);
Optimizer optimizer_from_name(const std::string& name);

struct TrainConfig {
  int epochs = 30;
  double lr = 0.02;
  double momentum = 0.9;  // sgd only; adam uses fixed betas 0.9 / 0.999
  Optimizer optimizer = Optimizer::adam;
  int batch_size = 8;
  uint64_t seed = 1;
  sampling::Strategy view_strategy = sampling::Strategy::segment_random;
  // Optional per-class loss weights (empty = uniform). Used by the DIST
  // student, whose accepted pseudo-labels can be heavily class-skewed.
  std::vector<double> class_weights;
};

struct TrainResult {
  std::vector<double> loss_curve;          // mean training CE per epoch
  std::vector<Checkpoint> checkpoints;     // tagged third / two_thirds / final
};

// Cross-entropy training. Checkpoints are captured after epochs ceil(n/3),
// ceil(2n/3), and n. Deterministic given the seed.
TrainResult train_supervised(ClipClassifier& model,
                             std::span<const LabeledClip> labeled,
                             const TrainConfig& config);

// Canonical evaluation: uniform view, argmax.
core::Prediction predict_clip(const ClipClassifier& model,
                              const core::VideoClip& clip);
core::MetricReport evaluate_clips(const ClipClassifier& model,
                                  std::span<const LabeledClip> clips,
                                  const core::LabelSpace& label_space);

// ---------------------------------------------------------------------------
// Shared training engine internals (used by the semi-supervised trainers so
// that their fully-ablated configurations replay the supervised path
// bit-exactly).
// ---------------------------------------------------------------------------

namespace engine {

// Called once per labeled batch with the per-sample clip embeddings; may add
// gradient into dembedding (same shape) and returns the extra loss term.
using BatchEmbeddingHook = std::function<double(
    std::span<const std::vector<double>> embeddings,
    std::span<const int> labels, std::vector<std::vector<double>>& dembedding)>;

struct OptimizerState {
  std::vector<double> velocity;    // sgd momentum / adam first moment
  std::vector<double> second_moment;
  uint64_t step = 0;
};

// Mean cross-entropy over the batch plus hook terms; accumulates into grad.
// With class_weights the mean is weighted: sum w_i ce_i / sum w_i.
double labeled_batch_loss_and_grad(const ClipClassifier& model,
                                   std::span<const LabeledClip> batch,
                                   std::span<const std::vector<int>> views,
                                   std::vector<double>& grad,
                                   const BatchEmbeddingHook& hook,
                                   std::span<const double> class_weights = {});

// One optimizer update; parameters re-quantized to the float32 grid.
void optimizer_step(std::vector<double>& params, const std::vector<double>& grad,
                    OptimizerState& state, Optimizer kind, double lr,
                    double momentum);

std::vector<int> shuffled_order(size_t n, rng::Xoshiro256ss& gen);

std::vector<int> draw_training_view(int clip_length, int frames_per_view,
                                    sampling::Strategy strategy,
                                    rng::Xoshiro256ss& gen);

}  // namespace engine

}  // namespace sslv::models
