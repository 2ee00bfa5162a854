#include "tvalign/taskvec.hpp"

#include <cstdio>

#include "tvalign/checkpoint.hpp"

namespace tvalign {
namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw FormatError(FormatError::Code::malformed, what);
}

std::string layer_name(std::size_t l) { return "layer." + std::to_string(l); }

std::size_t parse_index(const std::string& name, const std::string& prefix) {
  if (name.rfind(prefix, 0) != 0) malformed("unexpected record name '" + name + "'");
  const std::string digits = name.substr(prefix.size());
  if (digits.empty() || digits.size() > 6 ||
      digits.find_first_not_of("0123456789") != std::string::npos) {
    malformed("bad record index in '" + name + "'");
  }
  return static_cast<std::size_t>(std::stoul(digits));
}

}  // namespace

Matrix dense_delta(const LayerDelta& layer) {
  if (const auto* d = std::get_if<DenseDelta>(&layer)) return d->delta;
  const auto& lr = std::get<LowRankDelta>(layer);
  return matmul(lr.a, lr.b);
}

Matrix TaskVector::aux_or_zero(const std::string& name, std::size_t rows, std::size_t cols) const {
  auto it = aux.find(name);
  return it == aux.end() ? Matrix(rows, cols) : it->second;
}

bool TaskVector::is_dense() const {
  for (const auto& l : layers)
    if (!std::holds_alternative<DenseDelta>(l)) return false;
  return true;
}

std::string fingerprint(const ModelParams& params) {
  const auto bytes = save(params);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(bytes.data(), bytes.size())));
  return buf;
}

TaskVector extract(const ModelParams& fine_tuned, const ModelParams& pretrained, TrainMode mode,
                   const std::string& task_id) {
  require_same_architecture(fine_tuned, pretrained);
  TaskVector tv;
  tv.task_id = task_id;
  const std::size_t d = pretrained.width();

  if (mode == TrainMode::lora) {
    if (!fine_tuned.has_lora()) {
      throw std::invalid_argument("extract: lora mode needs a model carrying LoRA factors");
    }
    if (pretrained.has_lora()) {
      throw std::invalid_argument("extract: pre-trained model already carries LoRA factors");
    }
    for (std::size_t l = 0; l < fine_tuned.depth(); ++l) {
      tv.layers.emplace_back(LowRankDelta{fine_tuned.lora[l].a, fine_tuned.lora[l].b});
    }
  } else {
    for (std::size_t l = 0; l < fine_tuned.depth(); ++l) {
      tv.layers.emplace_back(
          DenseDelta{subtract(fine_tuned.effective_layer(l), pretrained.effective_layer(l))});
    }
  }
  if (mode == TrainMode::full) {
    tv.aux.emplace("input_proj", subtract(fine_tuned.input_proj, pretrained.input_proj));
    for (std::size_t l = 0; l < fine_tuned.depth(); ++l) {
      tv.aux.emplace("bias." + std::to_string(l),
                     subtract(fine_tuned.biases[l], pretrained.biases[l]));
    }
  }
  for (const auto& [task, head] : fine_tuned.heads) {
    auto it = pretrained.heads.find(task);
    if (it == pretrained.heads.end() || !(it->second == head)) tv.heads.emplace(task, head);
  }

  tv.meta["fingerprint"] = fingerprint(pretrained);
  tv.meta["mode"] = std::string(to_string(mode));
  tv.meta["width"] = std::to_string(d);
  tv.meta["depth"] = std::to_string(pretrained.depth());
  tv.meta["feature_dim"] = std::to_string(pretrained.feature_dim());
  return tv;
}

TaskVector materialize(const TaskVector& tv) {
  TaskVector out = tv;
  for (auto& layer : out.layers) {
    if (std::holds_alternative<LowRankDelta>(layer)) layer = DenseDelta{dense_delta(layer)};
  }
  return out;
}

TaskVector scale(const TaskVector& tv, double lambda) {
  TaskVector out = tv;
  for (auto& layer : out.layers) {
    if (auto* d = std::get_if<DenseDelta>(&layer)) {
      d->delta = scaled(d->delta, lambda);
    } else {
      auto& lr = std::get<LowRankDelta>(layer);
      lr.a = scaled(lr.a, lambda);
    }
  }
  for (auto& [name, m] : out.aux) m = scaled(m, lambda);
  return out;
}

namespace {

void require_matching(const TaskVector& a, const TaskVector& b) {
  if (a.depth() != b.depth()) {
    throw ArchitectureMismatch("task vectors have " + std::to_string(a.depth()) + " and " +
                               std::to_string(b.depth()) + " layers");
  }
  for (std::size_t l = 0; l < a.depth(); ++l) {
    const Matrix da = dense_delta(a.layers[l]);
    const Matrix db = dense_delta(b.layers[l]);
    if (da.rows() != db.rows()) {
      throw ArchitectureMismatch("task vectors differ at layer " + std::to_string(l) + ": " +
                                 da.shape_string() + " vs " + db.shape_string());
    }
  }
}

}  // namespace

TaskVector add(const TaskVector& lhs, const TaskVector& rhs) {
  require_matching(lhs, rhs);
  TaskVector out;
  out.task_id = lhs.task_id == rhs.task_id ? lhs.task_id : lhs.task_id + "+" + rhs.task_id;
  for (std::size_t l = 0; l < lhs.depth(); ++l) {
    out.layers.emplace_back(DenseDelta{add(dense_delta(lhs.layers[l]), dense_delta(rhs.layers[l]))});
  }
  out.aux = lhs.aux;
  for (const auto& [name, m] : rhs.aux) {
    auto it = out.aux.find(name);
    if (it == out.aux.end()) {
      out.aux.emplace(name, m);
    } else {
      it->second = add(it->second, m);
    }
  }
  out.heads = lhs.heads;
  out.heads.insert(rhs.heads.begin(), rhs.heads.end());
  out.meta = lhs.meta;
  return out;
}

TaskVector negate(const TaskVector& tv) { return scale(tv, -1.0); }

TaskVector zeros_like(const TaskVector& tv) {
  TaskVector out;
  out.task_id = tv.task_id;
  out.meta = tv.meta;
  for (const auto& layer : tv.layers) {
    const Matrix d = dense_delta(layer);
    out.layers.emplace_back(DenseDelta{Matrix(d.rows(), d.cols())});
  }
  for (const auto& [name, m] : tv.aux) out.aux.emplace(name, Matrix(m.rows(), m.cols()));
  return out;
}

void require_compatible(const ModelParams& params, const TaskVector& tv) {
  if (tv.depth() != params.depth()) {
    throw ArchitectureMismatch("task vector '" + tv.task_id + "' has " +
                               std::to_string(tv.depth()) + " layers, model has " +
                               std::to_string(params.depth()));
  }
  for (std::size_t l = 0; l < tv.depth(); ++l) {
    const std::size_t d = params.layers[l].rows();
    const bool ok = std::visit(
        [&](const auto& p) {
          if constexpr (std::is_same_v<std::decay_t<decltype(p)>, DenseDelta>) {
            return p.delta.rows() == d && p.delta.cols() == d;
          } else {
            return p.a.rows() == d && p.b.cols() == d && p.a.cols() == p.b.rows() &&
                   p.a.cols() <= d;
          }
        },
        tv.layers[l]);
    if (!ok) {
      throw ArchitectureMismatch("task vector '" + tv.task_id + "' layer " + std::to_string(l) +
                                 " does not match width " + std::to_string(d));
    }
  }
  for (const auto& [name, m] : tv.aux) {
    const Matrix* target = nullptr;
    if (name == "input_proj") {
      target = &params.input_proj;
    } else if (name.rfind("bias.", 0) == 0) {
      const std::size_t l = std::stoul(name.substr(5));
      if (l < params.depth()) target = &params.biases[l];
    }
    if (target == nullptr || target->rows() != m.rows() || target->cols() != m.cols()) {
      throw ArchitectureMismatch("task vector '" + tv.task_id + "' aux delta '" + name +
                                 "' does not fit the model");
    }
  }
}

ModelParams apply(const ModelParams& params, const TaskVector& tv, double lambda) {
  require_compatible(params, tv);
  ModelParams out = params;
  for (std::size_t l = 0; l < tv.depth(); ++l) {
    out.layers[l] = add(out.layers[l], scaled(dense_delta(tv.layers[l]), lambda));
  }
  for (const auto& [name, m] : tv.aux) {
    Matrix& target = name == "input_proj" ? out.input_proj : out.biases[std::stoul(name.substr(5))];
    target = add(target, scaled(m, lambda));
  }
  for (const auto& [task, head] : tv.heads) out.heads.insert_or_assign(task, head);
  return out;
}

std::vector<std::uint8_t> save(const TaskVector& tv) {
  Container c;
  c.magic = make_magic("TVEC");
  for (std::size_t l = 0; l < tv.depth(); ++l) {
    if (const auto* d = std::get_if<DenseDelta>(&tv.layers[l])) {
      c.records.push_back({RecordKind::dense, layer_name(l), {d->delta}});
    } else {
      const auto& lr = std::get<LowRankDelta>(tv.layers[l]);
      c.records.push_back({RecordKind::low_rank, layer_name(l), {lr.a, lr.b}});
    }
  }
  for (const auto& [task, head] : tv.heads) c.records.push_back({RecordKind::head, task, {head}});
  for (const auto& [name, m] : tv.aux) c.records.push_back({RecordKind::aux, name, {m}});
  c.meta = tv.meta;
  c.meta["task_id"] = tv.task_id;
  return encode(c);
}

TaskVector load_task_vector(std::span<const std::uint8_t> bytes) {
  Container c = decode(bytes, "TVEC");
  TaskVector tv;
  auto id = c.meta.find("task_id");
  if (id == c.meta.end()) malformed("task vector without task_id");
  tv.task_id = id->second;
  c.meta.erase(id);
  tv.meta = std::move(c.meta);

  for (auto& r : c.records) {
    switch (r.kind) {
      case RecordKind::dense:
      case RecordKind::low_rank: {
        if (parse_index(r.name, "layer.") != tv.layers.size()) malformed("layer records out of order");
        if (r.kind == RecordKind::dense) {
          if (r.matrices.size() != 1 || !r.matrices[0].is_square())
            malformed("dense layer '" + r.name + "' is not one square matrix");
          tv.layers.emplace_back(DenseDelta{std::move(r.matrices[0])});
        } else {
          if (r.matrices.size() != 2) malformed("low-rank layer '" + r.name + "' needs 2 factors");
          const Matrix& a = r.matrices[0];
          const Matrix& b = r.matrices[1];
          if (a.cols() != b.rows() || a.rows() != b.cols() || a.cols() > a.rows())
            malformed("low-rank layer '" + r.name + "' has incompatible factors");
          tv.layers.emplace_back(LowRankDelta{std::move(r.matrices[0]), std::move(r.matrices[1])});
        }
        break;
      }
      case RecordKind::head:
        if (r.matrices.size() != 1) malformed("head '" + r.name + "' needs one matrix");
        if (!tv.heads.emplace(r.name, std::move(r.matrices[0])).second) malformed("duplicate head");
        break;
      case RecordKind::aux:
        if (r.matrices.size() != 1) malformed("aux '" + r.name + "' needs one matrix");
        if (!tv.aux.emplace(r.name, std::move(r.matrices[0])).second) malformed("duplicate aux");
        break;
      default:
        malformed("record kind not allowed in a task vector");
    }
  }
  auto depth = tv.meta.find("depth");
  if (depth != tv.meta.end() && depth->second != std::to_string(tv.depth())) {
    malformed("meta depth " + depth->second + " disagrees with " + std::to_string(tv.depth()) +
              " layer records");
  }
  return tv;
}

std::vector<std::uint8_t> save(const ModelParams& params) {
  Container c;
  c.magic = make_magic("MPAR");
  c.records.push_back({RecordKind::input_proj, "input_proj", {params.input_proj}});
  for (std::size_t l = 0; l < params.depth(); ++l) {
    c.records.push_back({RecordKind::dense, layer_name(l), {params.layers[l]}});
    c.records.push_back({RecordKind::bias, "bias." + std::to_string(l), {params.biases[l]}});
    c.records.push_back({RecordKind::frame, "frame." + std::to_string(l), {params.frames[l]}});
  }
  for (std::size_t l = 0; l < params.lora.size(); ++l) {
    c.records.push_back({RecordKind::low_rank, "lora." + std::to_string(l),
                         {params.lora[l].a, params.lora[l].b}});
  }
  for (const auto& [task, head] : params.heads) c.records.push_back({RecordKind::head, task, {head}});
  c.meta["activation"] = std::string(to_string(params.activation));
  return encode(c);
}

ModelParams load_model(std::span<const std::uint8_t> bytes) {
  Container c = decode(bytes, "MPAR");
  ModelParams p;
  auto act = c.meta.find("activation");
  if (act == c.meta.end()) malformed("model without activation");
  try {
    p.activation = parse_activation(act->second);
  } catch (const std::invalid_argument& e) {
    malformed(e.what());
  }
  bool have_input = false;
  for (auto& r : c.records) {
    if (r.matrices.size() != (r.kind == RecordKind::low_rank ? 2u : 1u)) {
      malformed("record '" + r.name + "' has the wrong number of matrices");
    }
    switch (r.kind) {
      case RecordKind::input_proj:
        if (have_input) malformed("duplicate input_proj");
        p.input_proj = std::move(r.matrices[0]);
        have_input = true;
        break;
      case RecordKind::dense:
        if (parse_index(r.name, "layer.") != p.layers.size()) malformed("layers out of order");
        p.layers.push_back(std::move(r.matrices[0]));
        break;
      case RecordKind::bias:
        if (parse_index(r.name, "bias.") != p.biases.size()) malformed("biases out of order");
        p.biases.push_back(std::move(r.matrices[0]));
        break;
      case RecordKind::frame:
        if (parse_index(r.name, "frame.") != p.frames.size()) malformed("frames out of order");
        p.frames.push_back(std::move(r.matrices[0]));
        break;
      case RecordKind::low_rank:
        if (parse_index(r.name, "lora.") != p.lora.size()) malformed("LoRA factors out of order");
        p.lora.push_back({std::move(r.matrices[0]), std::move(r.matrices[1])});
        break;
      case RecordKind::head:
        if (!p.heads.emplace(r.name, std::move(r.matrices[0])).second) malformed("duplicate head");
        break;
      default:
        malformed("record kind not allowed in model parameters");
    }
  }
  if (!have_input) malformed("model without input_proj");
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    malformed(e.what());
  }
  return p;
}

}  // namespace tvalign
