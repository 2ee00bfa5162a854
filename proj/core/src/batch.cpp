#include "tvalign/batch.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace tvalign {

void LabeledBatch::validate() const {
  if (labels.empty()) throw std::invalid_argument("LabeledBatch '" + task_id + "' is empty");
  if (features.rows() != labels.size()) {
    throw std::invalid_argument("LabeledBatch '" + task_id + "': " +
                                std::to_string(features.rows()) + " rows but " +
                                std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 2) throw std::invalid_argument("LabeledBatch '" + task_id + "': < 2 classes");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::invalid_argument("LabeledBatch '" + task_id + "': label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

LabeledBatch LabeledBatch::select(const std::vector<std::size_t>& indices) const {
  LabeledBatch out;
  out.task_id = task_id;
  out.num_classes = num_classes;
  out.image_rows = image_rows;
  out.image_cols = image_cols;
  out.features = Matrix(indices.size(), features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= labels.size()) throw std::out_of_range("LabeledBatch::select: index out of range");
    const auto row = features.row(src);
    for (std::size_t j = 0; j < row.size(); ++j) out.features(i, j) = row[j];
    out.labels.push_back(labels[src]);
  }
  return out;
}

LabeledBatch sample_rows(const LabeledBatch& pool, std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(n, order.size());
  // Partial Fisher-Yates: the first `take` slots end up a uniform sample.
  for (std::size_t i = 0; i < take; ++i) {
    std::swap(order[i], order[i + rng.below(order.size() - i)]);
  }
  order.resize(take);
  return pool.select(order);
}

}  // namespace tvalign
