#include "tvalign/align.hpp"

#include <cmath>

#include "tvalign/checkpoint.hpp"

namespace tvalign {
namespace {

void require_alignment_fits(const TaskVector& tv, const Alignment& al) {
  if (al.depth() != tv.depth()) {
    throw ArchitectureMismatch("alignment '" + al.task_id + "' has " + std::to_string(al.depth()) +
                               " layers, task vector '" + tv.task_id + "' has " +
                               std::to_string(tv.depth()));
  }
  for (std::size_t l = 0; l < al.depth(); ++l) {
    const Matrix d = dense_delta(tv.layers[l]);
    if (!al.mats[l].is_square() || al.mats[l].rows() != d.rows()) {
      throw ArchitectureMismatch("alignment '" + al.task_id + "' layer " + std::to_string(l) +
                                 " is " + al.mats[l].shape_string() + ", delta is " +
                                 d.shape_string());
    }
  }
}

void require_task_lists(std::span<const TaskVector> tvs, std::span<const Alignment> als) {
  if (tvs.size() != als.size()) {
    throw std::invalid_argument("got " + std::to_string(tvs.size()) + " task vectors but " +
                                std::to_string(als.size()) + " alignments");
  }
  for (std::size_t i = 0; i < tvs.size(); ++i) {
    if (tvs[i].task_id != als[i].task_id) {
      throw std::invalid_argument("task mismatch at position " + std::to_string(i) + ": '" +
                                  tvs[i].task_id + "' vs alignment '" + als[i].task_id + "'");
    }
    require_alignment_fits(tvs[i], als[i]);
  }
}

// Target with the tasks' heads installed and the λ-scaled sum of their aux
// deltas added. Aux deltas act on parameters that live in the same
// coordinates for source and target, so they are never transformed.
ModelParams with_heads_and_aux(const ModelParams& target, std::span<const TaskVector> tvs,
                               double lambda) {
  ModelParams out = target;
  std::map<std::string, Matrix> aux_sum;
  for (const auto& tv : tvs) {
    require_compatible(target, tv);
    for (const auto& [name, m] : tv.aux) {
      auto it = aux_sum.find(name);
      if (it == aux_sum.end()) {
        aux_sum.emplace(name, m);
      } else {
        it->second = add(it->second, m);
      }
    }
    for (const auto& [task, head] : tv.heads) out.heads.insert_or_assign(task, head);
  }
  for (const auto& [name, m] : aux_sum) {
    Matrix& dst = name == "input_proj" ? out.input_proj : out.biases[std::stoul(name.substr(5))];
    dst = add(dst, scaled(m, lambda));
  }
  return out;
}

// W_l + λ·(d_0 + d_1 + ...), in exactly the order total_loss records it.
ModelParams merge_layers(ModelParams base, const std::vector<std::vector<Matrix>>& deltas,
                         double lambda) {
  if (deltas.empty()) return base;
  for (std::size_t l = 0; l < base.depth(); ++l) {
    Matrix sum = deltas[0][l];
    for (std::size_t i = 1; i < deltas.size(); ++i) sum = add(sum, deltas[i][l]);
    base.layers[l] = add(base.layers[l], scaled(sum, lambda));
  }
  return base;
}

}  // namespace

std::vector<double> Alignment::defects() const {
  std::vector<double> out;
  out.reserve(mats.size());
  for (const auto& u : mats) out.push_back(orthogonality_defect(u));
  return out;
}

Alignment identity_alignment(const std::string& task_id, const ModelParams& params) {
  Alignment al{task_id, {}};
  for (const auto& w : params.layers) al.mats.push_back(Matrix::identity(w.rows()));
  return al;
}

TaskVector transform(const TaskVector& tv, const Alignment& al) {
  require_alignment_fits(tv, al);
  TaskVector out = tv;
  for (std::size_t l = 0; l < tv.depth(); ++l) {
    out.layers[l] = DenseDelta{conjugate(dense_delta(tv.layers[l]), al.mats[l])};
  }
  return out;
}

ModelParams apply_aligned(const ModelParams& target, std::span<const TaskVector> tvs,
                          std::span<const Alignment> als, double lambda) {
  require_task_lists(tvs, als);
  std::vector<std::vector<Matrix>> deltas;
  for (std::size_t i = 0; i < tvs.size(); ++i) {
    std::vector<Matrix> per_layer;
    for (std::size_t l = 0; l < tvs[i].depth(); ++l) {
      per_layer.push_back(conjugate(dense_delta(tvs[i].layers[l]), als[i].mats[l]));
    }
    deltas.push_back(std::move(per_layer));
  }
  return merge_layers(with_heads_and_aux(target, tvs, lambda), deltas, lambda);
}

ModelParams apply_direct(const ModelParams& target, std::span<const TaskVector> tvs,
                         double lambda) {
  std::vector<std::vector<Matrix>> deltas;
  for (const auto& tv : tvs) {
    std::vector<Matrix> per_layer;
    for (const auto& layer : tv.layers) per_layer.push_back(dense_delta(layer));
    deltas.push_back(std::move(per_layer));
  }
  return merge_layers(with_heads_and_aux(target, tvs, lambda), deltas, lambda);
}

Alignment retract_orthogonal(const Alignment& al) {
  Alignment out{al.task_id, {}};
  for (const auto& u : al.mats) out.mats.push_back(qr_decompose(u).q);
  return out;
}

AlignmentLoss total_loss(const ModelParams& target, std::span<const TaskVector> tvs,
                         std::span<const Alignment> als, std::span<const LabeledBatch> batches,
                         double alpha, double lambda) {
  require_task_lists(tvs, als);
  if (!(alpha >= 0.0)) throw std::invalid_argument("total_loss: alpha must be >= 0");
  if (batches.empty()) throw std::invalid_argument("total_loss: no batches");
  for (const auto& b : batches) {
    bool known = false;
    for (const auto& tv : tvs) known = known || tv.task_id == b.task_id || tv.heads.contains(b.task_id);
    if (!known && !target.heads.contains(b.task_id)) {
      throw std::invalid_argument("total_loss: batch for unknown task '" + b.task_id + "'");
    }
  }

  const ModelParams base = with_heads_and_aux(target, tvs, lambda);
  AlignmentLoss out;
  Tape& tape = out.tape;

  // U leaves are recorded first so their gradients come back in task/layer
  // order.
  out.u_nodes.resize(als.size());
  for (std::size_t i = 0; i < als.size(); ++i)
    for (const auto& u : als[i].mats) out.u_nodes[i].push_back(tape.leaf(u));

  ForwardNodes nodes;
  nodes.input_proj = tape.constant(base.input_proj);
  for (std::size_t l = 0; l < base.depth(); ++l) {
    NodeId layer = tape.constant(base.layers[l]);
    if (!tvs.empty()) {
      NodeId sum{};
      for (std::size_t i = 0; i < tvs.size(); ++i) {
        const NodeId u = out.u_nodes[i][l];
        const NodeId delta = tape.constant(dense_delta(tvs[i].layers[l]));
        const NodeId moved = tape.matmul(tape.matmul(tape.transpose(u), delta), u);
        sum = i == 0 ? moved : tape.add(sum, moved);
      }
      layer = tape.add(layer, tape.scale(sum, lambda));
    }
    nodes.layers.push_back(layer);
    nodes.biases.push_back(tape.constant(base.biases[l]));
    nodes.frames.push_back(tape.constant(base.frames[l]));
  }

  std::map<std::string, NodeId> heads;
  for (const auto& b : batches) {
    if (heads.contains(b.task_id)) continue;
    auto it = base.heads.find(b.task_id);
    if (it == base.heads.end()) throw std::out_of_range("no head for task '" + b.task_id + "'");
    heads.emplace(b.task_id, tape.constant(it->second));
  }
  out.cross_entropy = record_mean_cross_entropy(tape, nodes, base.activation, batches, heads);

  NodeId penalty = tape.constant(Matrix(1, 1, 0.0));
  bool first = true;
  for (const auto& per_task : out.u_nodes) {
    for (const NodeId u : per_task) {
      const NodeId p = tape.orth_penalty(u);
      penalty = first ? p : tape.add(penalty, p);
      first = false;
    }
  }
  out.penalty = penalty;
  out.loss = tape.add(out.cross_entropy, tape.scale(penalty, alpha));
  return out;
}

namespace {

AlignResult train_joint(const ModelParams& target, std::span<const TaskVector> tvs,
                        std::span<const LabeledBatch> pools, const TrainConfig& cfg,
                        const AlignOptions& options, std::uint64_t stream_key) {
  AlignResult result;
  for (const auto& tv : tvs) result.alignments.push_back(identity_alignment(tv.task_id, target));

  std::vector<Rng> samplers;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    samplers.push_back(Rng(cfg.seed).split(stream_key * 1000003ULL + i));
  }

  AdamWState state;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<LabeledBatch> batches;
    for (std::size_t i = 0; i < pools.size(); ++i) {
      batches.push_back(sample_rows(pools[i], cfg.batch_size, samplers[i]));
    }
    const AlignmentLoss loss = total_loss(target, tvs, result.alignments, batches, cfg.alpha,
                                          cfg.lambda_scale);
    const double value = loss.value();
    if (!std::isfinite(value)) throw TrainingDiverged("train_alignment", step);
    result.losses.push_back(value);

    const Gradients grads = loss.tape.backward(loss.loss);
    std::vector<Matrix*> params;
    std::vector<Matrix> ordered;
    for (std::size_t i = 0; i < result.alignments.size(); ++i) {
      for (std::size_t l = 0; l < result.alignments[i].depth(); ++l) {
        params.push_back(&result.alignments[i].mats[l]);
        ordered.push_back(grads.at(loss.u_nodes[i][l]));
      }
    }
    adamw_step(state, params, ordered, cfg, step);
    if (options.retract) {
      for (auto& al : result.alignments) al = retract_orthogonal(al);
    }
  }
  return result;
}

}  // namespace

AlignResult train_alignment(const ModelParams& target, std::span<const TaskVector> tvs,
                            std::span<const LabeledBatch> pools, const TrainConfig& cfg,
                            const AlignOptions& options) {
  cfg.validate();
  if (pools.size() != tvs.size()) {
    throw std::invalid_argument("train_alignment: " + std::to_string(tvs.size()) +
                                " task vectors but " + std::to_string(pools.size()) + " pools");
  }
  for (std::size_t i = 0; i < pools.size(); ++i) {
    if (pools[i].size() == 0) {
      throw std::invalid_argument("train_alignment: empty few-shot pool for task '" +
                                  tvs[i].task_id + "'");
    }
    if (pools[i].task_id != tvs[i].task_id) {
      throw std::invalid_argument("train_alignment: pool '" + pools[i].task_id +
                                  "' paired with task vector '" + tvs[i].task_id + "'");
    }
  }

  AlignResult result;
  if (options.joint || tvs.size() <= 1) {
    result = train_joint(target, tvs, pools, cfg, options, 0);
  } else {
    // Each task owns its U matrices and sees only its own vector and data.
    result.losses.assign(cfg.steps, 0.0);
    for (std::size_t i = 0; i < tvs.size(); ++i) {
      AlignResult single =
          train_joint(target, tvs.subspan(i, 1), pools.subspan(i, 1), cfg, options, i + 1);
      result.alignments.push_back(std::move(single.alignments.front()));
      for (std::size_t s = 0; s < single.losses.size(); ++s) {
        result.losses[s] += single.losses[s] / static_cast<double>(tvs.size());
      }
    }
  }

  for (const auto& al : result.alignments) {
    result.defects.push_back(al.defects());
    for (double d : result.defects.back()) {
      result.within_tolerance = result.within_tolerance && d <= options.defect_tolerance;
    }
  }
  return result;
}

std::vector<std::uint8_t> save(const Alignment& al) {
  Container c;
  c.magic = make_magic("ALGN");
  for (std::size_t l = 0; l < al.depth(); ++l) {
    c.records.push_back({RecordKind::dense, "u." + std::to_string(l), {al.mats[l]}});
  }
  c.meta["task_id"] = al.task_id;
  return encode(c);
}

Alignment load_alignment(std::span<const std::uint8_t> bytes) {
  Container c = decode(bytes, "ALGN");
  Alignment al;
  auto id = c.meta.find("task_id");
  if (id == c.meta.end() || c.meta.size() != 1) {
    throw FormatError(FormatError::Code::malformed, "alignment meta must hold exactly task_id");
  }
  al.task_id = id->second;
  for (auto& r : c.records) {
    if (r.kind != RecordKind::dense || r.matrices.size() != 1 || !r.matrices[0].is_square() ||
        r.name != "u." + std::to_string(al.mats.size())) {
      throw FormatError(FormatError::Code::malformed, "bad alignment record '" + r.name + "'");
    }
    al.mats.push_back(std::move(r.matrices[0]));
  }
  return al;
}

}  // namespace tvalign
