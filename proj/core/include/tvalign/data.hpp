#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tvalign/align.hpp"
#include "tvalign/batch.hpp"
#include "tvalign/model.hpp"

namespace tvalign {

/// Class-conditional isotropic Gaussians around seeded class means.
struct SyntheticTaskSpec {
  std::string task_id = "task0";
  std::size_t num_classes = 4;
  std::size_t feature_dim = 16;
  double separation = 3.0;  // mean vectors are separation · N(0, I/feature_dim)
  double noise = 1.0;       // per-coordinate standard deviation
  std::uint64_t seed = 0;
};

/// num_classes × feature_dim matrix of class means.
Matrix class_means(const SyntheticTaskSpec& spec);

/// n samples with labels i mod num_classes in shuffled order.
LabeledBatch gen_task(const SyntheticTaskSpec& spec, std::size_t n);

/// Index of the closest mean (Euclidean) for every row.
std::vector<int> nearest_mean_labels(const Matrix& means, const Matrix& features);

struct RotatedTarget {
  ModelParams target;
  Alignment truth;  // U_l = Q_l, so transform(tv, truth) is exact
};

/// Target with layer l = Q_lᵀ W_l Q_l and frame F_l Q_l, where
/// Q_l = random_orthogonal(d, seed + l). Because the frame absorbs the
/// rotation, the target computes exactly the source's function until task
/// vectors are added in the wrong coordinates.
RotatedTarget make_rotated_target(const ModelParams& source, std::uint64_t seed);

struct AugmentOptions {
  double noise = 0.05;           // additive Gaussian feature noise
  bool horizontal_flip = false;  // image batches only; every other copy
};

/// per_class examples of every class, each repeated augment_factor times.
/// The first copy is the original; later copies are augmented. Throws
/// std::invalid_argument when a class has fewer than per_class examples.
LabeledBatch fewshot_sample(const LabeledBatch& pool, std::size_t per_class,
                            std::size_t augment_factor, const AugmentOptions& augment,
                            std::uint64_t seed);

/// Mirrors every image row left-right. Needs image_rows/image_cols.
LabeledBatch horizontal_flip(const LabeledBatch& batch);

class IdxError : public std::runtime_error {
 public:
  enum class Code { io, bad_magic, count_mismatch, truncated };
  IdxError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1] by dividing by 255.
LabeledBatch load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                      const std::string& task_id = "idx");

/// Infinite stream of per-task mini-batches drawn from fixed pools.
BatchStream minibatch_stream(std::vector<LabeledBatch> pools, std::size_t batch_size,
                             std::uint64_t seed);

}  // namespace tvalign
