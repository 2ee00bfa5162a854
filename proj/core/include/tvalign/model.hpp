#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tvalign/autodiff.hpp"
#include "tvalign/batch.hpp"
#include "tvalign/linalg.hpp"

namespace tvalign {

/// Which parameter group a fine-tuning run updates.
enum class TrainMode { embed_only, lora, full };

std::string_view to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view name);  // "embed", "lora", "full"

enum class Schedule { cosine, constant };

std::string_view to_string(Schedule schedule);
Schedule parse_schedule(std::string_view name);

struct Architecture {
  std::size_t feature_dim = 16;
  std::size_t width = 16;
  std::size_t depth = 4;
  Activation activation = Activation::tanh;
  double layer_gain = 1.0;  // std of W_l entries is layer_gain / sqrt(width)
};

struct LoraFactors {
  Matrix a;  // width × r
  Matrix b;  // r × width
  friend bool operator==(const LoraFactors&, const LoraFactors&) = default;
};

/// Residual classifier:
///
///   h_0 = x · input_proj
///   h_l = h_{l-1} + act(h_{l-1} · F_l W_l F_lᵀ + bias_l)      l = 1..L
///   logits = h_L · head[task]
///
/// W_l are the square alignable layers (plus A_l B_l when LoRA factors are
/// present). F_l are frozen orthogonal frames: the identity for a freshly
/// built model, and the hidden rotation of a rotated target.
struct ModelParams {
  Matrix input_proj;
  std::vector<Matrix> layers;
  std::vector<Matrix> biases;
  std::vector<Matrix> frames;
  std::vector<LoraFactors> lora;
  std::map<std::string, Matrix> heads;
  Activation activation = Activation::tanh;

  std::size_t feature_dim() const { return input_proj.rows(); }
  std::size_t width() const { return input_proj.cols(); }
  std::size_t depth() const { return layers.size(); }
  bool has_lora() const { return !lora.empty(); }

  /// W_l, plus A_l B_l when LoRA factors are attached.
  Matrix effective_layer(std::size_t l) const;

  /// Throws std::invalid_argument when the layout invariants do not hold.
  void validate() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Raised when two models or a model and a task vector disagree on layout.
class ArchitectureMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void require_same_architecture(const ModelParams& a, const ModelParams& b);

/// A freshly "pre-trained" model: Gaussian weights, identity frames, no heads.
ModelParams init_model(const Architecture& arch, std::uint64_t seed);

/// Classification head initialised the same way fine_tune does it.
Matrix init_head(std::size_t width, std::size_t num_classes, std::uint64_t seed,
                 std::string_view task_id);

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  Schedule schedule = Schedule::cosine;
  std::size_t steps = 300;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double alpha = 1.0;         // orthogonality penalty weight
  double lambda_scale = 1.0;  // task-vector scale
  std::size_t lora_rank = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Learning rate used by the update with 1-based index `step`. The cosine
/// schedule evaluates η₀·½(1 + cos(π·(step−1)/steps)), so the first update
/// runs at η₀.
double learning_rate_at(const TrainConfig& cfg, std::size_t step);

struct AdamWState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

struct StepStats {
  double grad_norm = 0.0;     // before clipping
  double clipped_norm = 0.0;  // after clipping
  double learning_rate = 0.0;
};

/// One AdamW update of `params` in place. Gradients are clipped to a global
/// norm of cfg.clip_norm, then moments are updated and the decoupled weight
/// decay p ← p − η·wd·p is applied before the Adam step. `step` is 1-based.
StepStats adamw_step(AdamWState& state, std::span<Matrix* const> params,
                     std::span<const Matrix> grads, const TrainConfig& cfg, std::size_t step);

/// Parameter nodes recorded on a tape for one forward pass.
struct ForwardNodes {
  NodeId input_proj;
  std::vector<NodeId> layers;  // effective W_l
  std::vector<NodeId> biases;
  std::vector<NodeId> frames;
};

/// Records the forward pass and returns the logits node.
NodeId record_forward(Tape& tape, const ForwardNodes& nodes, Activation act, NodeId features,
                      NodeId head);

/// Records `params` as constants.
ForwardNodes record_constants(Tape& tape, const ModelParams& params);

/// Records the example-weighted mean cross-entropy over `batches`, scoring
/// each batch with heads.at(batch.task_id). Returns a 1×1 node.
NodeId record_mean_cross_entropy(Tape& tape, const ForwardNodes& nodes, Activation act,
                                 std::span<const LabeledBatch> batches,
                                 const std::map<std::string, NodeId>& heads);

/// Logits for `batch` under the head registered for `task`.
Matrix forward(const ModelParams& params, const LabeledBatch& batch, std::string_view task);

/// Fraction of correctly classified rows, using the head for batch.task_id.
double accuracy(const ModelParams& params, const LabeledBatch& batch);

/// Mean cross-entropy over all rows of all batches, each with its own head.
double cross_entropy(const ModelParams& params, std::span<const LabeledBatch> batches);

/// Raised when the training loss stops being finite.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::string_view what, std::size_t step);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Produces the per-task mini-batches for a 1-based step.
using BatchStream = std::function<std::vector<LabeledBatch>(std::size_t step)>;

struct FineTuneResult {
  ModelParams params;
  std::vector<double> losses;         // one per step
  std::vector<double> clipped_norms;  // post-clip gradient norm per step
};

/// Trains the parameter group selected by `mode`. Heads missing for a task
/// the stream yields are created with init_head and trained; heads already
/// present are frozen except in full mode. LoRA factors are attached when
/// absent (A Gaussian, B zero). Everything else is left bitwise untouched.
FineTuneResult fine_tune(const ModelParams& params, const BatchStream& data, TrainMode mode,
                         const TrainConfig& cfg);

}  // namespace tvalign
