#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tvalign/autodiff.hpp"
#include "tvalign/batch.hpp"
#include "tvalign/linalg.hpp"
#include "tvalign/model.hpp"
#include "tvalign/taskvec.hpp"

namespace tvalign {

/// Per-layer matrices U_l mapping one task's vector into the target's
/// coordinates via ΔW ↦ U_lᵀ ΔW U_l.
struct Alignment {
  std::string task_id;
  std::vector<Matrix> mats;

  std::size_t depth() const { return mats.size(); }
  /// orthogonality_defect of each U_l.
  std::vector<double> defects() const;

  friend bool operator==(const Alignment&, const Alignment&) = default;
};

/// U_l = I for every layer of `params`.
Alignment identity_alignment(const std::string& task_id, const ModelParams& params);

/// Dense vector with layer l replaced by U_lᵀ Δ_l U_l. Aux deltas and heads
/// pass through unchanged.
TaskVector transform(const TaskVector& tv, const Alignment& al);

/// W̃_l = W_l + λ·Σ_i U_{i,l}ᵀ Δ_{i,l} U_{i,l}; every task's head is installed.
ModelParams apply_aligned(const ModelParams& target, std::span<const TaskVector> tvs,
                          std::span<const Alignment> als, double lambda);

/// Same cumulative merge without any transform (direct transfer).
ModelParams apply_direct(const ModelParams& target, std::span<const TaskVector> tvs,
                         double lambda);

/// Replaces each U_l by the orthogonal factor of its QR decomposition.
Alignment retract_orthogonal(const Alignment& al);

/// The alignment objective recorded on a tape whose only trainable leaves
/// are the U matrices (u_nodes[task][layer]).
struct AlignmentLoss {
  Tape tape;
  NodeId loss;
  NodeId cross_entropy;
  NodeId penalty;
  std::vector<std::vector<NodeId>> u_nodes;

  double value() const { return tape.scalar(loss); }
  double cross_entropy_value() const { return tape.scalar(cross_entropy); }
  double penalty_value() const { return tape.scalar(penalty); }
};

/// Mean cross-entropy of the target with all transformed, λ-scaled vectors
/// applied together (each batch scored with its own task's head), plus
/// alpha · Σ_{i,l} ‖U_{i,l}ᵀU_{i,l} − I‖_F². The three lists are matched by
/// task id and position.
AlignmentLoss total_loss(const ModelParams& target, std::span<const TaskVector> tvs,
                         std::span<const Alignment> als, std::span<const LabeledBatch> batches,
                         double alpha, double lambda);

struct AlignOptions {
  bool joint = true;              // false trains each task's U on its own
  bool retract = false;           // project U onto O(d) after every step
  double defect_tolerance = 1e-2;
};

struct AlignResult {
  std::vector<Alignment> alignments;
  std::vector<double> losses;                // per step (joint mode)
  std::vector<std::vector<double>> defects;  // [task][layer] after training
  bool within_tolerance = true;
};

/// Learns one Alignment per task vector from few-shot pools (pools[i] pairs
/// with tvs[i]). Every U starts at I; each step draws cfg.batch_size rows per
/// task, evaluates total_loss and applies AdamW to the U matrices only.
AlignResult train_alignment(const ModelParams& target, std::span<const TaskVector> tvs,
                            std::span<const LabeledBatch> pools, const TrainConfig& cfg,
                            const AlignOptions& options = {});

std::vector<std::uint8_t> save(const Alignment& al);
Alignment load_alignment(std::span<const std::uint8_t> bytes);

}  // namespace tvalign
