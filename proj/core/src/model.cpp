#include "tvalign/model.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <string>

namespace tvalign {

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::embed_only: return "embed";
    case TrainMode::lora: return "lora";
    case TrainMode::full: return "full";
  }
  return "unknown";
}

TrainMode parse_train_mode(std::string_view name) {
  if (name == "embed" || name == "embed_only") return TrainMode::embed_only;
  if (name == "lora") return TrainMode::lora;
  if (name == "full") return TrainMode::full;
  throw std::invalid_argument("unknown mode '" + std::string(name) + "'");
}

std::string_view to_string(Schedule schedule) {
  return schedule == Schedule::cosine ? "cosine" : "constant";
}

Schedule parse_schedule(std::string_view name) {
  if (name == "cosine") return Schedule::cosine;
  if (name == "constant") return Schedule::constant;
  throw std::invalid_argument("unknown schedule '" + std::string(name) + "'");
}

Matrix ModelParams::effective_layer(std::size_t l) const {
  if (lora.empty()) return layers.at(l);
  return add(layers.at(l), matmul(lora.at(l).a, lora.at(l).b));
}

void ModelParams::validate() const {
  const std::size_t d = width();
  if (input_proj.empty()) throw std::invalid_argument("ModelParams: empty input_proj");
  if (layers.empty()) throw std::invalid_argument("ModelParams: needs at least one layer");
  if (biases.size() != layers.size() || frames.size() != layers.size()) {
    throw std::invalid_argument("ModelParams: biases/frames count differs from layer count");
  }
  if (!lora.empty() && lora.size() != layers.size()) {
    throw std::invalid_argument("ModelParams: LoRA factor count differs from layer count");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].rows() != d || layers[l].cols() != d)
      throw std::invalid_argument("ModelParams: layer " + std::to_string(l) + " is " +
                                  layers[l].shape_string() + ", expected square of width " +
                                  std::to_string(d));
    if (frames[l].rows() != d || frames[l].cols() != d)
      throw std::invalid_argument("ModelParams: frame " + std::to_string(l) + " has wrong shape");
    if (biases[l].rows() != 1 || biases[l].cols() != d)
      throw std::invalid_argument("ModelParams: bias " + std::to_string(l) + " has wrong shape");
    if (!lora.empty()) {
      const auto& f = lora[l];
      if (f.a.rows() != d || f.b.cols() != d || f.a.cols() != f.b.rows() || f.a.cols() > d)
        throw std::invalid_argument("ModelParams: LoRA factors " + std::to_string(l) +
                                    " have inconsistent shapes");
    }
  }
  for (const auto& [task, head] : heads) {
    if (head.rows() != d || head.cols() < 2)
      throw std::invalid_argument("ModelParams: head '" + task + "' is " + head.shape_string());
  }
}

void require_same_architecture(const ModelParams& a, const ModelParams& b) {
  if (a.feature_dim() != b.feature_dim() || a.width() != b.width() || a.depth() != b.depth()) {
    throw ArchitectureMismatch(
        "architecture mismatch: features/width/depth " + std::to_string(a.feature_dim()) + "/" +
        std::to_string(a.width()) + "/" + std::to_string(a.depth()) + " vs " +
        std::to_string(b.feature_dim()) + "/" + std::to_string(b.width()) + "/" +
        std::to_string(b.depth()));
  }
  for (std::size_t l = 0; l < a.depth(); ++l) {
    if (a.layers[l].rows() != b.layers[l].rows()) {
      throw ArchitectureMismatch("architecture mismatch at layer " + std::to_string(l));
    }
  }
}

ModelParams init_model(const Architecture& arch, std::uint64_t seed) {
  if (arch.feature_dim == 0 || arch.width == 0 || arch.depth == 0) {
    throw std::invalid_argument("init_model: dimensions must be positive");
  }
  Rng rng(seed);
  ModelParams p;
  p.activation = arch.activation;
  p.input_proj = Matrix::gaussian(arch.feature_dim, arch.width, rng,
                                  1.0 / std::sqrt(static_cast<double>(arch.feature_dim)));
  const double layer_std = arch.layer_gain / std::sqrt(static_cast<double>(arch.width));
  for (std::size_t l = 0; l < arch.depth; ++l) {
    p.layers.push_back(Matrix::gaussian(arch.width, arch.width, rng, layer_std));
    p.biases.push_back(Matrix::gaussian(1, arch.width, rng, 0.1));
    p.frames.push_back(Matrix::identity(arch.width));
  }
  return p;
}

Matrix init_head(std::size_t width, std::size_t num_classes, std::uint64_t seed,
                 std::string_view task_id) {
  Rng rng = Rng(seed).split(fnv1a(task_id.data(), task_id.size()));
  return Matrix::gaussian(width, num_classes, rng, 1.0 / std::sqrt(static_cast<double>(width)));
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("TrainConfig: clip_norm must be > 0");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(alpha >= 0.0)) throw std::invalid_argument("TrainConfig: alpha must be >= 0");
  if (lora_rank == 0) throw std::invalid_argument("TrainConfig: lora_rank must be >= 1");
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step) {
  if (cfg.schedule == Schedule::constant || cfg.steps == 0) return cfg.learning_rate;
  const double t = static_cast<double>(step - 1) / static_cast<double>(cfg.steps);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

StepStats adamw_step(AdamWState& state, std::span<Matrix* const> params,
                     std::span<const Matrix> grads, const TrainConfig& cfg, std::size_t step) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adamw_step: " + std::to_string(params.size()) +
                                " parameters but " + std::to_string(grads.size()) + " gradients");
  }
  if (step == 0) throw std::invalid_argument("adamw_step: step is 1-based");
  if (state.first_moment.empty()) {
    for (const Matrix* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      state.second_moment.emplace_back(p->rows(), p->cols());
    }
  }

  StepStats stats;
  double sq = 0.0;
  for (const Matrix& g : grads)
    for (double x : g.entries()) sq += x * x;
  stats.grad_norm = std::sqrt(sq);
  const double clip = stats.grad_norm > cfg.clip_norm ? cfg.clip_norm / stats.grad_norm : 1.0;
  stats.clipped_norm = stats.grad_norm * clip;
  stats.learning_rate = learning_rate_at(cfg, step);

  const double lr = stats.learning_rate;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->entries();
    auto g = grads[k].entries();
    auto m = state.first_moment[k].entries();
    auto v = state.second_moment[k].entries();
    if (g.size() != p.size()) {
      throw ShapeError("adamw_step: gradient " + std::to_string(k) + " has wrong shape");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      p[i] -= lr * cfg.weight_decay * p[i];
      p[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + cfg.epsilon);
    }
  }
  return stats;
}

NodeId record_forward(Tape& tape, const ForwardNodes& nodes, Activation act, NodeId features,
                      NodeId head) {
  NodeId h = tape.matmul(features, nodes.input_proj);
  for (std::size_t l = 0; l < nodes.layers.size(); ++l) {
    const NodeId frame = nodes.frames[l];
    const NodeId map = tape.matmul(tape.matmul(frame, nodes.layers[l]), tape.transpose(frame));
    const NodeId pre = tape.add_row(tape.matmul(h, map), nodes.biases[l]);
    h = tape.add(h, tape.activation(pre, act));
  }
  return tape.matmul(h, head);
}

ForwardNodes record_constants(Tape& tape, const ModelParams& params) {
  ForwardNodes nodes;
  nodes.input_proj = tape.constant(params.input_proj);
  for (std::size_t l = 0; l < params.depth(); ++l) {
    nodes.layers.push_back(tape.constant(params.effective_layer(l)));
    nodes.biases.push_back(tape.constant(params.biases[l]));
    nodes.frames.push_back(tape.constant(params.frames[l]));
  }
  return nodes;
}

namespace {

const Matrix& head_for(const ModelParams& params, std::string_view task) {
  auto it = params.heads.find(std::string(task));
  if (it == params.heads.end()) {
    throw std::out_of_range("no head for task '" + std::string(task) + "'");
  }
  return it->second;
}

void check_features(const ModelParams& params, const LabeledBatch& batch) {
  if (batch.features.cols() != params.feature_dim()) {
    throw ShapeError("forward: batch has " + std::to_string(batch.features.cols()) +
                     " features, model expects " + std::to_string(params.feature_dim()));
  }
}

}  // namespace

Matrix forward(const ModelParams& params, const LabeledBatch& batch, std::string_view task) {
  check_features(params, batch);
  const Matrix& head = head_for(params, task);
  Tape tape;
  const ForwardNodes nodes = record_constants(tape, params);
  const NodeId logits = record_forward(tape, nodes, params.activation,
                                       tape.constant(batch.features), tape.constant(head));
  return tape.value(logits);
}

double accuracy(const ModelParams& params, const LabeledBatch& batch) {
  if (batch.size() == 0) return 0.0;
  const Matrix logits = forward(params, batch, batch.task_id);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[best]) best = j;
    if (static_cast<int>(best) == batch.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

NodeId record_mean_cross_entropy(Tape& tape, const ForwardNodes& nodes, Activation act,
                                 std::span<const LabeledBatch> batches,
                                 const std::map<std::string, NodeId>& heads) {
  if (batches.empty()) throw std::invalid_argument("cross-entropy needs at least one batch");
  std::size_t total = 0;
  for (const auto& b : batches) total += b.size();
  NodeId loss{};
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const LabeledBatch& b = batches[i];
    auto head = heads.find(b.task_id);
    if (head == heads.end()) throw std::out_of_range("no head for task '" + b.task_id + "'");
    const NodeId logits = record_forward(tape, nodes, act, tape.constant(b.features), head->second);
    const NodeId ce = tape.scale(tape.softmax_cross_entropy(logits, b.labels),
                                 static_cast<double>(b.size()) / static_cast<double>(total));
    loss = i == 0 ? ce : tape.add(loss, ce);
  }
  return loss;
}

double cross_entropy(const ModelParams& params, std::span<const LabeledBatch> batches) {
  Tape tape;
  const ForwardNodes nodes = record_constants(tape, params);
  std::map<std::string, NodeId> heads;
  for (const auto& b : batches) {
    check_features(params, b);
    if (!heads.contains(b.task_id))
      heads.emplace(b.task_id, tape.constant(head_for(params, b.task_id)));
  }
  return tape.scalar(record_mean_cross_entropy(tape, nodes, params.activation, batches, heads));
}

TrainingDiverged::TrainingDiverged(std::string_view what, std::size_t step)
    : std::runtime_error(std::string(what) + " diverged at step " + std::to_string(step)),
      step_(step) {}

FineTuneResult fine_tune(const ModelParams& params, const BatchStream& data, TrainMode mode,
                         const TrainConfig& cfg) {
  cfg.validate();
  params.validate();
  FineTuneResult result{params, {}, {}};
  if (cfg.steps == 0) return result;

  ModelParams& work = result.params;
  if (mode == TrainMode::lora && !work.has_lora()) {
    const std::size_t d = work.width();
    const std::size_t r = std::min(cfg.lora_rank, d);
    Rng rng = Rng(cfg.seed).split(0x10ba);
    for (std::size_t l = 0; l < work.depth(); ++l) {
      work.lora.push_back({Matrix::gaussian(d, r, rng, 1.0 / std::sqrt(static_cast<double>(d))),
                           Matrix(r, d)});
    }
  }

  // Heads the caller supplied stay frozen outside full mode; heads created
  // here have nothing to be frozen to and are trained.
  std::set<std::string> trained_heads;
  if (mode == TrainMode::full)
    for (const auto& [task, head] : work.heads) trained_heads.insert(task);

  AdamWState state;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const std::vector<LabeledBatch> batches = data(step);
    if (batches.empty()) throw std::invalid_argument("fine_tune: data stream yielded no batches");
    for (const auto& b : batches) {
      check_features(work, b);
      if (b.size() == 0) throw std::invalid_argument("fine_tune: empty batch for " + b.task_id);
      if (!work.heads.contains(b.task_id)) {
        work.heads.emplace(b.task_id, init_head(work.width(), b.num_classes, cfg.seed, b.task_id));
        trained_heads.insert(b.task_id);
      }
    }

    // Trainable tensors for this step, in a fixed order.
    std::vector<Matrix*> trainable;
    Tape tape;
    ForwardNodes nodes;
    auto record = [&](Matrix& m, bool train) {
      if (!train) return tape.constant(m);
      trainable.push_back(&m);
      return tape.leaf(m);
    };
    const bool full = mode == TrainMode::full;
    nodes.input_proj = record(work.input_proj, full);
    for (std::size_t l = 0; l < work.depth(); ++l) {
      if (work.has_lora()) {
        const NodeId base = record(work.layers[l], mode != TrainMode::lora);
        const NodeId a = record(work.lora[l].a, mode == TrainMode::lora);
        const NodeId b = record(work.lora[l].b, mode == TrainMode::lora);
        nodes.layers.push_back(tape.add(base, tape.matmul(a, b)));
      } else {
        nodes.layers.push_back(record(work.layers[l], mode != TrainMode::lora));
      }
      nodes.biases.push_back(record(work.biases[l], full));
      nodes.frames.push_back(tape.constant(work.frames[l]));
    }
    std::map<std::string, NodeId> head_nodes;
    for (const auto& b : batches) {
      if (!head_nodes.contains(b.task_id))
        head_nodes.emplace(b.task_id,
                           record(work.heads.at(b.task_id), trained_heads.contains(b.task_id)));
    }

    if (!state.first_moment.empty() && state.first_moment.size() != trainable.size()) {
      throw std::invalid_argument("fine_tune: the stream must yield the same tasks every step");
    }

    const NodeId loss =
        record_mean_cross_entropy(tape, nodes, work.activation, batches, head_nodes);

    const double value = tape.scalar(loss);
    if (!std::isfinite(value)) throw TrainingDiverged("fine_tune", step);
    result.losses.push_back(value);

    const Gradients grads = tape.backward(loss);
    std::vector<Matrix> ordered;
    ordered.reserve(trainable.size());
    for (const auto& [id, g] : grads) ordered.push_back(g);
    const StepStats stats = adamw_step(state, trainable, ordered, cfg, step);
    result.clipped_norms.push_back(stats.clipped_norm);
  }
  return result;
}

}  // namespace tvalign
