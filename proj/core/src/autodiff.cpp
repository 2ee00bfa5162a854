#include "tvalign/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

namespace tvalign {

std::string_view to_string(Activation act) {
  return act == Activation::relu ? "relu" : "tanh";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::add_row: return "add_row";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::softmax_xent: return "softmax_xent";
    case OpKind::orth_penalty: return "orth_penalty";
  }
  return "unknown";
}

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return NodeId{nodes_.size() - 1};
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw std::out_of_range("Tape: node " + std::to_string(id.index) + " does not exist");
  }
  return nodes_[id.index];
}

const Matrix& Tape::value(NodeId id) const { return node(id).value; }

double Tape::scalar(NodeId id) const {
  const Matrix& v = value(id);
  if (v.rows() != 1 || v.cols() != 1) {
    throw ShapeError("Tape::scalar: node is " + v.shape_string() + ", expected 1x1");
  }
  return v(0, 0);
}

OpKind Tape::kind(NodeId id) const { return node(id).kind; }

std::vector<NodeId> Tape::leaves() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == OpKind::leaf) out.push_back(NodeId{i});
  return out;
}

NodeId Tape::leaf(Matrix value) { return push({OpKind::leaf, {}, {}, 0.0, {}, std::move(value)}); }

NodeId Tape::constant(Matrix value) {
  return push({OpKind::constant, {}, {}, 0.0, {}, std::move(value)});
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  Matrix v = tvalign::matmul(value(a), value(b));
  return push({OpKind::matmul, a, b, 0.0, {}, std::move(v)});
}

NodeId Tape::transpose(NodeId a) {
  return push({OpKind::transpose, a, {}, 0.0, {}, tvalign::transpose(value(a))});
}

NodeId Tape::add(NodeId a, NodeId b) {
  return push({OpKind::add, a, b, 0.0, {}, tvalign::add(value(a), value(b))});
}

NodeId Tape::scale(NodeId a, double factor) {
  return push({OpKind::scale, a, {}, factor, {}, scaled(value(a), factor)});
}

NodeId Tape::add_row(NodeId a, NodeId row) {
  const Matrix& x = value(a);
  const Matrix& r = value(row);
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw ShapeError("add_row: shape mismatch " + x.shape_string() + " vs " + r.shape_string());
  }
  Matrix v = x;
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) += r(0, j);
  return push({OpKind::add_row, a, row, 0.0, {}, std::move(v)});
}

NodeId Tape::activation(NodeId a, Activation act) {
  Matrix v = value(a);
  if (act == Activation::relu) {
    for (double& x : v.entries()) x = x > 0.0 ? x : 0.0;
    return push({OpKind::relu, a, {}, 0.0, {}, std::move(v)});
  }
  for (double& x : v.entries()) x = std::tanh(x);
  return push({OpKind::tanh, a, {}, 0.0, {}, std::move(v)});
}

NodeId Tape::softmax_cross_entropy(NodeId logits, std::span<const int> labels) {
  const Matrix& z = value(logits);
  if (labels.size() != z.rows() || z.rows() == 0) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for logits " +
                     z.shape_string());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= z.cols()) {
      throw std::out_of_range("softmax_xent: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(z.cols()) + ")");
    }
    const auto row = z.row(i);
    const double m = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double x : row) sum += std::exp(x - m);
    total += m + std::log(sum) - row[static_cast<std::size_t>(y)];
  }
  Matrix v(1, 1, total / static_cast<double>(z.rows()));
  return push({OpKind::softmax_xent, logits, {}, 0.0,
               std::vector<int>(labels.begin(), labels.end()), std::move(v)});
}

NodeId Tape::orth_penalty(NodeId u) {
  return push({OpKind::orth_penalty, u, {}, 0.0, {}, Matrix(1, 1, orthogonality_defect(value(u)))});
}

NodeId Tape::forward_node(OpKind kind, std::span<const NodeId> inputs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(to_string(kind)) + ": expected " +
                                  std::to_string(n) + " inputs, got " +
                                  std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::add: need(2); return add(inputs[0], inputs[1]);
    case OpKind::add_row: need(2); return add_row(inputs[0], inputs[1]);
    case OpKind::transpose: need(1); return transpose(inputs[0]);
    case OpKind::relu: need(1); return activation(inputs[0], Activation::relu);
    case OpKind::tanh: need(1); return activation(inputs[0], Activation::tanh);
    case OpKind::orth_penalty: need(1); return orth_penalty(inputs[0]);
    default:
      throw std::invalid_argument(std::string(to_string(kind)) +
                                  " needs extra arguments; use the dedicated method");
  }
}

Gradients Tape::backward(NodeId loss) const {
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward: loss node is " + lv.shape_string() + ", expected scalar 1x1");
  }
  std::vector<std::optional<Matrix>> grads(loss.index + 1);
  grads[loss.index] = Matrix(1, 1, 1.0);

  auto accumulate = [&](NodeId target, Matrix g) {
    auto& slot = grads[target.index];
    if (!slot) {
      slot = std::move(g);
      return;
    }
    auto dst = slot->entries();
    auto src = g.entries();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };

  for (std::size_t idx = loss.index + 1; idx-- > 0;) {
    if (!grads[idx]) continue;
    const Node& n = nodes_[idx];
    const Matrix& g = *grads[idx];
    switch (n.kind) {
      case OpKind::leaf:
      case OpKind::constant:
        break;
      case OpKind::matmul:
        accumulate(n.lhs, tvalign::matmul(g, tvalign::transpose(value(n.rhs))));
        accumulate(n.rhs, tvalign::matmul(tvalign::transpose(value(n.lhs)), g));
        break;
      case OpKind::transpose:
        accumulate(n.lhs, tvalign::transpose(g));
        break;
      case OpKind::add:
        accumulate(n.lhs, g);
        accumulate(n.rhs, g);
        break;
      case OpKind::scale:
        accumulate(n.lhs, scaled(g, n.factor));
        break;
      case OpKind::add_row: {
        Matrix row(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) row(0, j) += g(i, j);
        accumulate(n.lhs, g);
        accumulate(n.rhs, std::move(row));
        break;
      }
      case OpKind::relu: {
        Matrix d = g;
        const Matrix& x = value(n.lhs);
        for (std::size_t i = 0; i < d.size(); ++i)
          if (!(x.entries()[i] > 0.0)) d.entries()[i] = 0.0;
        accumulate(n.lhs, std::move(d));
        break;
      }
      case OpKind::tanh: {
        Matrix d = g;
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double y = n.value.entries()[i];
          d.entries()[i] *= 1.0 - y * y;
        }
        accumulate(n.lhs, std::move(d));
        break;
      }
      case OpKind::softmax_xent: {
        // d/dz mean CE = (softmax(z) - onehot(y)) / rows
        const Matrix& z = value(n.lhs);
        Matrix d(z.rows(), z.cols());
        const double upstream = g(0, 0) / static_cast<double>(z.rows());
        for (std::size_t i = 0; i < z.rows(); ++i) {
          const auto row = z.row(i);
          const double m = *std::max_element(row.begin(), row.end());
          double sum = 0.0;
          for (double x : row) sum += std::exp(x - m);
          for (std::size_t j = 0; j < z.cols(); ++j) d(i, j) = std::exp(row[j] - m) / sum;
          d(i, static_cast<std::size_t>(n.labels[i])) -= 1.0;
          for (std::size_t j = 0; j < z.cols(); ++j) d(i, j) *= upstream;
        }
        accumulate(n.lhs, std::move(d));
        break;
      }
      case OpKind::orth_penalty: {
        // d/dU ‖UᵀU − I‖² = 4 U (UᵀU − I)
        const Matrix& u = value(n.lhs);
        Matrix gram = tvalign::matmul(tvalign::transpose(u), u);
        for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) -= 1.0;
        accumulate(n.lhs, scaled(tvalign::matmul(u, gram), 4.0 * g(0, 0)));
        break;
      }
    }
    // Intermediate gradients are not needed once propagated.
    if (n.kind != OpKind::leaf) grads[idx].reset();
  }

  Gradients out;
  for (std::size_t i = 0; i <= loss.index; ++i) {
    if (nodes_[i].kind != OpKind::leaf) continue;
    const Matrix& v = nodes_[i].value;
    out.emplace(NodeId{i}, grads[i] ? std::move(*grads[i]) : Matrix(v.rows(), v.cols()));
  }
  // Leaves recorded after the loss node cannot influence it.
  for (std::size_t i = loss.index + 1; i < nodes_.size(); ++i) {
    if (nodes_[i].kind != OpKind::leaf) continue;
    const Matrix& v = nodes_[i].value;
    out.emplace(NodeId{i}, Matrix(v.rows(), v.cols()));
  }
  return out;
}

}  // namespace tvalign
