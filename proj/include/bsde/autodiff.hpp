#pragma once

// Reverse-mode automatic differentiation over a tape of dense-block
// primitives. Every node holds a (rows x batch) matrix; a scalar is 1x1.

#include "bsde/common.hpp"

#include <cstddef>
#include <vector>

namespace bsde {

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind {
  leaf,
  affine,      // W x + b (b broadcast over columns)
  relu,
  add,
  sub,
  mul,         // elementwise
  scale,       // constant * a
  square,
  sum_rows,    // column sums -> 1 x batch
  mean,        // -> 1 x 1
  variance,    // population variance of all entries -> 1 x 1
  maximum,     // elementwise max(a, b)
  pointwise,   // caller-supplied value with elementwise partials
};

class Tape {
 public:
  /// Leaf whose adjoint is tracked (a trainable parameter).
  NodeId variable(Matrix value);
  /// Leaf excluded from differentiation (data).
  NodeId constant(Matrix value);

  NodeId affine(NodeId weights, NodeId bias, NodeId x);
  NodeId relu(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId square(NodeId a);
  NodeId sum_rows(NodeId a);
  NodeId mean(NodeId a);
  NodeId variance(NodeId a);
  /// Ties send the adjoint to `a`.
  NodeId maximum(NodeId a, NodeId b);
  /// Output `value` (r x batch) with partials[k] shaped like inputs[k].
  /// Inputs with more rows than the output receive the row-broadcast adjoint.
  NodeId pointwise(const std::vector<NodeId>& inputs, Matrix value, std::vector<Matrix> partials);

  const Matrix& value(NodeId node) const { return records_[node.index].value; }
  /// Adjoint after backward(); zero-size for constants.
  const Matrix& gradient(NodeId node) const { return adjoints_[node.index]; }
  bool requires_grad(NodeId node) const { return records_[node.index].requires_grad; }
  OpKind kind(NodeId node) const { return records_[node.index].kind; }
  std::size_t size() const { return records_.size(); }

  /// One reverse sweep from a 1x1 loss. Throws std::invalid_argument for a
  /// non-scalar node.
  void backward(NodeId loss);
  /// Reverse sweep seeded with an explicit adjoint for `output`.
  void backward(NodeId output, const Matrix& seed);

 private:
  struct Record {
    OpKind kind = OpKind::leaf;
    std::vector<NodeId> inputs;
    double factor = 0.0;
    bool requires_grad = false;
    Matrix value;
    std::vector<Matrix> partials;
  };

  NodeId push(Record record);
  const Record& at(NodeId n) const;

  std::vector<Record> records_;
  std::vector<Matrix> adjoints_;
};

}  // namespace bsde
