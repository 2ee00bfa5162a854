#include "tvalign/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tvalign/checkpoint.hpp"

namespace tvalign {

Matrix class_means(const SyntheticTaskSpec& spec) {
  if (spec.num_classes < 2 || spec.feature_dim == 0) {
    throw std::invalid_argument("SyntheticTaskSpec: needs >= 2 classes and >= 1 feature");
  }
  Rng rng = Rng(spec.seed).split(0x6d65616e);
  const double stddev = spec.separation / std::sqrt(static_cast<double>(spec.feature_dim));
  return Matrix::gaussian(spec.num_classes, spec.feature_dim, rng, stddev);
}

LabeledBatch gen_task(const SyntheticTaskSpec& spec, std::size_t n) {
  if (n < spec.num_classes) {
    throw std::invalid_argument("gen_task: n must be >= num_classes");
  }
  const Matrix means = class_means(spec);
  Rng rng = Rng(spec.seed).split(0x73616d70 + n);

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % spec.num_classes);
  for (std::size_t i = n; i-- > 1;) std::swap(labels[i], labels[rng.below(i + 1)]);

  LabeledBatch out;
  out.task_id = spec.task_id;
  out.num_classes = spec.num_classes;
  out.features = Matrix(n, spec.feature_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto mean = means.row(static_cast<std::size_t>(labels[i]));
    for (std::size_t j = 0; j < spec.feature_dim; ++j) {
      out.features(i, j) = mean[j] + spec.noise * rng.normal();
    }
  }
  out.labels = std::move(labels);
  return out;
}

std::vector<int> nearest_mean_labels(const Matrix& means, const Matrix& features) {
  if (means.cols() != features.cols()) {
    throw ShapeError("nearest_mean_labels: means " + means.shape_string() + " vs features " +
                     features.shape_string());
  }
  std::vector<int> out(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    double best = INFINITY;
    for (std::size_t c = 0; c < means.rows(); ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < means.cols(); ++j) {
        const double e = features(i, j) - means(c, j);
        dist += e * e;
      }
      if (dist < best) {
        best = dist;
        out[i] = static_cast<int>(c);
      }
    }
  }
  return out;
}

RotatedTarget make_rotated_target(const ModelParams& source, std::uint64_t seed) {
  source.validate();
  RotatedTarget out{source, Alignment{"truth", {}}};
  ModelParams& t = out.target;
  for (std::size_t l = 0; l < source.depth(); ++l) {
    const Matrix q = random_orthogonal(source.layers[l].rows(), seed + l);
    t.layers[l] = conjugate(source.layers[l], q);
    t.frames[l] = matmul(source.frames[l], q);
    if (source.has_lora()) {
      t.lora[l].a = matmul(transpose(q), source.lora[l].a);
      t.lora[l].b = matmul(source.lora[l].b, q);
    }
    out.truth.mats.push_back(q);
  }
  return out;
}

LabeledBatch horizontal_flip(const LabeledBatch& batch) {
  if (batch.image_rows * batch.image_cols != batch.feature_dim() || batch.image_cols == 0) {
    throw std::invalid_argument("horizontal_flip: batch does not carry an image shape");
  }
  LabeledBatch out = batch;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t r = 0; r < batch.image_rows; ++r) {
      for (std::size_t c = 0; c < batch.image_cols; ++c) {
        out.features(i, r * batch.image_cols + c) =
            batch.features(i, r * batch.image_cols + (batch.image_cols - 1 - c));
      }
    }
  }
  return out;
}

LabeledBatch fewshot_sample(const LabeledBatch& pool, std::size_t per_class,
                            std::size_t augment_factor, const AugmentOptions& augment,
                            std::uint64_t seed) {
  if (per_class == 0 || augment_factor == 0) {
    throw std::invalid_argument("fewshot_sample: per_class and augment_factor must be >= 1");
  }
  if (augment.horizontal_flip && pool.image_rows * pool.image_cols != pool.feature_dim()) {
    throw std::invalid_argument("fewshot_sample: horizontal flip needs an image batch");
  }
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(pool.num_classes);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    by_class.at(static_cast<std::size_t>(pool.labels[i])).push_back(i);
  }

  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < per_class) {
      throw std::invalid_argument("fewshot_sample: class " + std::to_string(c) + " of '" +
                                  pool.task_id + "' has " + std::to_string(idx.size()) +
                                  " examples, need " + std::to_string(per_class));
    }
    for (std::size_t i = 0; i < per_class; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(per_class));
  }

  const LabeledBatch originals = pool.select(chosen);
  const LabeledBatch flipped = augment.horizontal_flip ? horizontal_flip(originals) : originals;
  std::vector<std::size_t> repeat;
  for (std::size_t i = 0; i < originals.size(); ++i)
    for (std::size_t k = 0; k < augment_factor; ++k) repeat.push_back(i);
  LabeledBatch out = originals.select(repeat);

  for (std::size_t row = 0; row < out.size(); ++row) {
    const std::size_t copy = row % augment_factor;
    if (copy == 0) continue;
    const std::size_t src = row / augment_factor;
    for (std::size_t j = 0; j < out.feature_dim(); ++j) {
      double x = (augment.horizontal_flip && copy % 2 == 1) ? flipped.features(src, j)
                                                            : originals.features(src, j);
      if (augment.noise > 0.0) x += augment.noise * rng.normal();
      out.features(row, j) = x;
    }
  }
  return out;
}

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::string& file) {
  if (bytes.size() < offset + 4) {
    throw IdxError(IdxError::Code::truncated, "'" + file + "': truncated header");
  }
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

std::vector<std::uint8_t> read_idx_file(const std::filesystem::path& path) {
  try {
    return read_file(path);
  } catch (const std::runtime_error& e) {
    throw IdxError(IdxError::Code::io, e.what());
  }
}

}  // namespace

LabeledBatch load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                      const std::string& task_id) {
  const auto img = read_idx_file(images);
  const auto lab = read_idx_file(labels);
  const std::string img_name = images.string();
  const std::string lab_name = labels.string();

  if (read_be32(img, 0, img_name) != 0x00000803) {
    throw IdxError(IdxError::Code::bad_magic, "'" + img_name + "' is not an IDX image file");
  }
  if (read_be32(lab, 0, lab_name) != 0x00000801) {
    throw IdxError(IdxError::Code::bad_magic, "'" + lab_name + "' is not an IDX label file");
  }
  const std::size_t n = read_be32(img, 4, img_name);
  const std::size_t rows = read_be32(img, 8, img_name);
  const std::size_t cols = read_be32(img, 12, img_name);
  const std::size_t n_labels = read_be32(lab, 4, lab_name);
  if (n != n_labels) {
    throw IdxError(IdxError::Code::count_mismatch, std::to_string(n) + " images but " +
                                                       std::to_string(n_labels) + " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) {
    throw IdxError(IdxError::Code::truncated, "'" + img_name + "' declares an empty payload");
  }
  const std::size_t pixels = rows * cols;
  if (img.size() - 16 < n * pixels) {
    throw IdxError(IdxError::Code::truncated, "'" + img_name + "': payload shorter than " +
                                                  std::to_string(n) + " images");
  }
  if (lab.size() - 8 < n) {
    throw IdxError(IdxError::Code::truncated, "'" + lab_name + "': payload shorter than " +
                                                  std::to_string(n) + " labels");
  }

  LabeledBatch out;
  out.task_id = task_id;
  out.image_rows = rows;
  out.image_cols = cols;
  out.features = Matrix(n, pixels);
  out.labels.resize(n);
  int max_label = 1;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      out.features(i, p) = static_cast<double>(img[16 + i * pixels + p]) / 255.0;
    }
    out.labels[i] = lab[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = static_cast<std::size_t>(max_label) + 1;
  return out;
}

BatchStream minibatch_stream(std::vector<LabeledBatch> pools, std::size_t batch_size,
                             std::uint64_t seed) {
  return [pools = std::move(pools), batch_size, seed](std::size_t step) {
    std::vector<LabeledBatch> out;
    out.reserve(pools.size());
    for (std::size_t i = 0; i < pools.size(); ++i) {
      Rng rng = Rng(seed).split(step * 7919 + i);
      out.push_back(sample_rows(pools[i], batch_size, rng));
    }
    return out;
  };
}

}  // namespace tvalign
