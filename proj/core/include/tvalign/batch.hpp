#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tvalign/linalg.hpp"

namespace tvalign {

/// Features (one row per example) with integer class labels for one task.
struct LabeledBatch {
  Matrix features;
  std::vector<int> labels;
  std::string task_id;
  std::size_t num_classes = 0;
  // Set by the IDX loader so that image-aware augmentation can reshape rows.
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return features.cols(); }

  /// Throws std::invalid_argument if row count, label range or class count
  /// is inconsistent.
  void validate() const;

  /// Rows at `indices`, in that order.
  LabeledBatch select(const std::vector<std::size_t>& indices) const;
};

/// min(n, pool.size()) distinct rows drawn uniformly without replacement.
LabeledBatch sample_rows(const LabeledBatch& pool, std::size_t n, Rng& rng);

}  // namespace tvalign
