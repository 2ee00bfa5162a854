#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tvalign/linalg.hpp"
#include "tvalign/model.hpp"

namespace tvalign {

struct DenseDelta {
  Matrix delta;
  friend bool operator==(const DenseDelta&, const DenseDelta&) = default;
};

/// Update stored as the factor pair of ΔW = A·B.
struct LowRankDelta {
  Matrix a;  // d × r
  Matrix b;  // r × d
  friend bool operator==(const LowRankDelta&, const LowRankDelta&) = default;
};

using LayerDelta = std::variant<DenseDelta, LowRankDelta>;

/// The d × d update a layer payload represents.
Matrix dense_delta(const LayerDelta& layer);

/// Per-layer parameter difference between a fine-tuned and a pre-trained
/// model, plus the heads it was trained with.
struct TaskVector {
  std::string task_id;
  std::vector<LayerDelta> layers;
  // Heads are per task and never summed: combined vectors keep one per task.
  std::map<std::string, Matrix> heads;
  // Deltas on parameters outside the alignable layers, only produced by full
  // fine-tuning: "input_proj" and "bias.<l>".
  std::map<std::string, Matrix> aux;
  // source fingerprint, mode, dimensions and creation config.
  std::map<std::string, std::string> meta;

  std::size_t depth() const { return layers.size(); }
  /// aux[name], or zeros of the given shape when absent.
  Matrix aux_or_zero(const std::string& name, std::size_t rows, std::size_t cols) const;
  bool is_dense() const;

  friend bool operator==(const TaskVector&, const TaskVector&) = default;
};

/// Stable hash of a model's full parameter set, as 16 hex digits.
std::string fingerprint(const ModelParams& params);

/// ΔW = W' − W per layer (dense modes) or the LoRA factor pairs (lora mode).
/// Heads of `fine_tuned` that are new or changed are carried along.
TaskVector extract(const ModelParams& fine_tuned, const ModelParams& pretrained, TrainMode mode,
                   const std::string& task_id);

TaskVector materialize(const TaskVector& tv);

/// Multiplies every delta by lambda. Low-rank layers scale A only.
TaskVector scale(const TaskVector& tv, double lambda);

/// Layerwise sum; low-rank inputs are materialized first, so the result is
/// dense. Heads are merged by task id.
TaskVector add(const TaskVector& lhs, const TaskVector& rhs);
TaskVector negate(const TaskVector& tv);

/// All-zero dense vector shaped like `tv`, without heads.
TaskVector zeros_like(const TaskVector& tv);

/// Checks layer count and widths against `params`.
void require_compatible(const ModelParams& params, const TaskVector& tv);

/// W_l ← W_l + λ·Δ_l, aux deltas likewise; the vector's heads are installed.
ModelParams apply(const ModelParams& params, const TaskVector& tv, double lambda);

std::vector<std::uint8_t> save(const TaskVector& tv);
TaskVector load_task_vector(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> save(const ModelParams& params);
ModelParams load_model(std::span<const std::uint8_t> bytes);

}  // namespace tvalign
