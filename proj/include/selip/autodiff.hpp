#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selip/matrix.hpp"

namespace selip {

// A trainable tensor: values plus a same-shape gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { std::fill(grad.data().begin(), grad.data().end(), 0.0); }
};

enum class Primitive {
  Constant,
  Param,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,
  AddRow,     // (n x m) + (1 x m) bias row
  Scale,      // multiply by a scalar
  DivScalar,  // divide by a scalar
  Exp,
  Log,
  Tanh,
  RowSoftmax,
  RowLogSoftmax,
  RowL2Norm,  // (n x m) -> (n x 1)
  DivRows,    // (n x m) / (n x 1)
  Sum,
  Mean,
};

std::string_view primitive_name(Primitive p);
// Throws Error{UnsupportedPrimitive} for names outside the supported set.
Primitive primitive_from_name(std::string_view name);

using NodeId = std::size_t;

// Reverse-mode differentiation tape. Nodes are appended in evaluation order,
// so a reverse sweep visits every node after all of its consumers.
// A tape is single-owner; parameters referenced by it must outlive backward().
class Tape {
 public:
  NodeId constant(Matrix value);
  NodeId parameter(Parameter& param);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId add_row(NodeId a, NodeId bias);
  NodeId scale(NodeId a, double factor);
  NodeId div_scalar(NodeId a, double divisor);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId tanh(NodeId a);
  NodeId row_softmax(NodeId a);
  NodeId row_log_softmax(NodeId a);
  NodeId row_l2_norm(NodeId a);
  NodeId div_rows(NodeId a, NodeId norms);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);

  // Generic entry point by primitive; scalar is used by Scale/DivScalar.
  NodeId apply(Primitive op, std::span<const NodeId> inputs, double scalar = 0.0);

  const Matrix& value(NodeId id) const;
  double scalar_value(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and overwrites the gradient of every Parameter
  // on the tape (zero when root does not depend on it). root must be 1 x 1.
  void backward(NodeId root);

 private:
  struct Node {
    Primitive op;
    NodeId a = 0;
    NodeId b = 0;
    double scalar = 0.0;
    Matrix value;
    Matrix grad;
    Parameter* param = nullptr;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;
  Matrix& grad_of(NodeId id);

  std::vector<Node> nodes_;
};

// Max relative error between analytic gradients (already accumulated in each
// Parameter::grad) and central differences of `f` with step h. The relative
// error denominator is max(|analytic|, |numeric|, 1e-12).
double finite_diff_check(const std::function<double()>& f, std::span<Parameter* const> params, double h);

}  // namespace selip
