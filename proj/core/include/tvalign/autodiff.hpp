#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "tvalign/linalg.hpp"

namespace tvalign {

enum class Activation { relu, tanh };

std::string_view to_string(Activation act);
Activation parse_activation(std::string_view name);

struct NodeId {
  std::size_t index = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

/// The closed set of differentiable operations.
enum class OpKind {
  leaf,          // trainable input
  constant,      // frozen input, never receives a gradient entry
  matmul,
  transpose,
  add,
  scale,         // multiply by a fixed scalar
  add_row,       // broadcast a 1×n row over every row of the input
  relu,
  tanh,
  softmax_xent,  // mean softmax cross-entropy against integer labels
  orth_penalty,  // ‖UᵀU − I‖_F²
};

std::string_view to_string(OpKind kind);

/// Gradients keyed by trainable leaf.
using Gradients = std::map<NodeId, Matrix>;

/// Define-by-run reverse-mode tape. Values are computed eagerly when a node is
/// recorded; nodes only ever reference earlier nodes, so the tape is a
/// topologically ordered DAG.
///
/// A Tape is not thread-safe; use one tape per thread.
class Tape {
 public:
  NodeId leaf(Matrix value);
  NodeId constant(Matrix value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId add_row(NodeId a, NodeId row);
  NodeId activation(NodeId a, Activation act);
  NodeId softmax_cross_entropy(NodeId logits, std::span<const int> labels);
  NodeId orth_penalty(NodeId u);

  /// Generic entry point for the unary/binary ops without extra arguments
  /// (matmul, transpose, add, relu, tanh, orth_penalty).
  NodeId forward_node(OpKind kind, std::span<const NodeId> inputs);

  const Matrix& value(NodeId id) const;
  double scalar(NodeId id) const;
  OpKind kind(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  std::vector<NodeId> leaves() const;

  /// dLoss/dLeaf for every trainable leaf (zero when unreachable). The loss
  /// must be 1×1. Does not mutate the tape.
  Gradients backward(NodeId loss) const;

 private:
  struct Node {
    OpKind kind;
    NodeId lhs{};
    NodeId rhs{};
    double factor = 0.0;
    std::vector<int> labels;
    Matrix value;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;

  std::vector<Node> nodes_;
};

}  // namespace tvalign
