#include "selip/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "selip/error.hpp"

namespace selip {

namespace {

constexpr struct {
  Primitive op;
  std::string_view name;
} kPrimitiveNames[] = {
    {Primitive::Constant, "constant"},
    {Primitive::Param, "parameter"},
    {Primitive::MatMul, "matmul"},
    {Primitive::Transpose, "transpose"},
    {Primitive::Add, "add"},
    {Primitive::Sub, "sub"},
    {Primitive::Mul, "mul"},
    {Primitive::AddRow, "add_row"},
    {Primitive::Scale, "scale"},
    {Primitive::DivScalar, "div_scalar"},
    {Primitive::Exp, "exp"},
    {Primitive::Log, "log"},
    {Primitive::Tanh, "tanh"},
    {Primitive::RowSoftmax, "row_softmax"},
    {Primitive::RowLogSoftmax, "row_log_softmax"},
    {Primitive::RowL2Norm, "row_l2_norm"},
    {Primitive::DivRows, "div_rows"},
    {Primitive::Sum, "sum"},
    {Primitive::Mean, "mean"},
};

void require_same_shape(const Matrix& a, const Matrix& b, std::string_view op) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                                              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                              "x" + std::to_string(b.cols()));
  }
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  std::transform(a.data().begin(), a.data().end(), out.data().begin(), f);
  return out;
}

Matrix row_softmax_value(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto in = a.row(r);
    auto o = out.row(r);
    const double max = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) total += (o[c] = std::exp(in[c] - max));
    for (double& v : o) v /= total;
  }
  return out;
}

Matrix row_log_softmax_value(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto in = a.row(r);
    auto o = out.row(r);
    const double max = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (double v : in) total += std::exp(v - max);
    const double log_total = std::log(total) + max;
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] - log_total;
  }
  return out;
}

}  // namespace

std::string_view primitive_name(Primitive p) {
  for (const auto& entry : kPrimitiveNames) {
    if (entry.op == p) return entry.name;
  }
  return "?";
}

Primitive primitive_from_name(std::string_view name) {
  for (const auto& entry : kPrimitiveNames) {
    if (entry.name == name) return entry.op;
  }
  throw Error(ErrorCode::UnsupportedPrimitive, "no primitive named '" + std::string(name) + "'",
              std::string(name));
}

NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id >= nodes_.size()) throw Error(ErrorCode::ShapeMismatch, "unknown node " + std::to_string(id));
  return nodes_[id];
}

Matrix& Tape::grad_of(NodeId id) {
  auto& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

const Matrix& Tape::value(NodeId id) const { return node(id).value; }

double Tape::scalar_value(NodeId id) const {
  const auto& v = value(id);
  if (v.rows() != 1 || v.cols() != 1) throw Error(ErrorCode::ShapeMismatch, "node is not a scalar");
  return v(0, 0);
}

NodeId Tape::constant(Matrix value) { return push(Node{Primitive::Constant, 0, 0, 0.0, std::move(value), {}, nullptr}); }

NodeId Tape::parameter(Parameter& param) {
  return push(Node{Primitive::Param, 0, 0, 0.0, param.value, {}, &param});
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  return push(Node{Primitive::MatMul, a, b, 0.0, selip::matmul(value(a), value(b)), {}, nullptr});
}

NodeId Tape::transpose(NodeId a) {
  return push(Node{Primitive::Transpose, a, 0, 0.0, value(a).transposed(), {}, nullptr});
}

NodeId Tape::add(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "add");
  Matrix out = value(a);
  const auto& vb = value(b).data();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += vb[i];
  return push(Node{Primitive::Add, a, b, 0.0, std::move(out), {}, nullptr});
}

NodeId Tape::sub(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "sub");
  Matrix out = value(a);
  const auto& vb = value(b).data();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= vb[i];
  return push(Node{Primitive::Sub, a, b, 0.0, std::move(out), {}, nullptr});
}

NodeId Tape::mul(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "mul");
  Matrix out = value(a);
  const auto& vb = value(b).data();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= vb[i];
  return push(Node{Primitive::Mul, a, b, 0.0, std::move(out), {}, nullptr});
}

NodeId Tape::add_row(NodeId a, NodeId bias) {
  const auto& va = value(a);
  const auto& vb = value(bias);
  if (vb.rows() != 1 || vb.cols() != va.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "add_row: bias must be 1x" + std::to_string(va.cols()));
  }
  Matrix out = va;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += vb(0, c);
  }
  return push(Node{Primitive::AddRow, a, bias, 0.0, std::move(out), {}, nullptr});
}

NodeId Tape::scale(NodeId a, double factor) {
  return push(Node{Primitive::Scale, a, 0, factor, map(value(a), [factor](double v) { return v * factor; }), {},
                   nullptr});
}

NodeId Tape::div_scalar(NodeId a, double divisor) {
  return push(Node{Primitive::DivScalar, a, 0, divisor,
                   map(value(a), [divisor](double v) { return v / divisor; }), {}, nullptr});
}

NodeId Tape::exp(NodeId a) {
  return push(Node{Primitive::Exp, a, 0, 0.0, map(value(a), [](double v) { return std::exp(v); }), {}, nullptr});
}

NodeId Tape::log(NodeId a) {
  return push(Node{Primitive::Log, a, 0, 0.0, map(value(a), [](double v) { return std::log(v); }), {}, nullptr});
}

NodeId Tape::tanh(NodeId a) {
  return push(Node{Primitive::Tanh, a, 0, 0.0, map(value(a), [](double v) { return std::tanh(v); }), {}, nullptr});
}

NodeId Tape::row_softmax(NodeId a) {
  return push(Node{Primitive::RowSoftmax, a, 0, 0.0, row_softmax_value(value(a)), {}, nullptr});
}

NodeId Tape::row_log_softmax(NodeId a) {
  return push(Node{Primitive::RowLogSoftmax, a, 0, 0.0, row_log_softmax_value(value(a)), {}, nullptr});
}

NodeId Tape::row_l2_norm(NodeId a) {
  const auto& va = value(a);
  Matrix out(va.rows(), 1);
  for (std::size_t r = 0; r < va.rows(); ++r) {
    double ss = 0.0;
    for (double v : va.row(r)) ss += v * v;
    out(r, 0) = std::sqrt(ss);
  }
  return push(Node{Primitive::RowL2Norm, a, 0, 0.0, std::move(out), {}, nullptr});
}

NodeId Tape::div_rows(NodeId a, NodeId norms) {
  const auto& va = value(a);
  const auto& vn = value(norms);
  if (vn.rows() != va.rows() || vn.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "div_rows: divisor must be " + std::to_string(va.rows()) + "x1");
  }
  Matrix out = va;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (double& v : out.row(r)) v /= vn(r, 0);
  }
  return push(Node{Primitive::DivRows, a, norms, 0.0, std::move(out), {}, nullptr});
}

NodeId Tape::sum(NodeId a) {
  double total = 0.0;
  for (double v : value(a).data()) total += v;
  return push(Node{Primitive::Sum, a, 0, 0.0, Matrix(1, 1, total), {}, nullptr});
}

NodeId Tape::mean(NodeId a) {
  const auto& va = value(a);
  double total = 0.0;
  for (double v : va.data()) total += v;
  return push(Node{Primitive::Mean, a, 0, 0.0, Matrix(1, 1, total / static_cast<double>(va.size())), {}, nullptr});
}

NodeId Tape::apply(Primitive op, std::span<const NodeId> inputs, double scalar) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw Error(ErrorCode::ShapeMismatch, std::string(primitive_name(op)) + " takes " + std::to_string(n) +
                                                " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (op) {
    case Primitive::MatMul: arity(2); return matmul(inputs[0], inputs[1]);
    case Primitive::Transpose: arity(1); return transpose(inputs[0]);
    case Primitive::Add: arity(2); return add(inputs[0], inputs[1]);
    case Primitive::Sub: arity(2); return sub(inputs[0], inputs[1]);
    case Primitive::Mul: arity(2); return mul(inputs[0], inputs[1]);
    case Primitive::AddRow: arity(2); return add_row(inputs[0], inputs[1]);
    case Primitive::Scale: arity(1); return scale(inputs[0], scalar);
    case Primitive::DivScalar: arity(1); return div_scalar(inputs[0], scalar);
    case Primitive::Exp: arity(1); return exp(inputs[0]);
    case Primitive::Log: arity(1); return log(inputs[0]);
    case Primitive::Tanh: arity(1); return tanh(inputs[0]);
    case Primitive::RowSoftmax: arity(1); return row_softmax(inputs[0]);
    case Primitive::RowLogSoftmax: arity(1); return row_log_softmax(inputs[0]);
    case Primitive::RowL2Norm: arity(1); return row_l2_norm(inputs[0]);
    case Primitive::DivRows: arity(2); return div_rows(inputs[0], inputs[1]);
    case Primitive::Sum: arity(1); return sum(inputs[0]);
    case Primitive::Mean: arity(1); return mean(inputs[0]);
    case Primitive::Constant:
    case Primitive::Param: break;
  }
  throw Error(ErrorCode::UnsupportedPrimitive,
              std::string(primitive_name(op)) + " is a leaf and cannot be applied to inputs",
              std::string(primitive_name(op)));
}

void Tape::backward(NodeId root) {
  if (root >= nodes_.size()) throw Error(ErrorCode::ShapeMismatch, "unknown root node");
  const auto& root_value = nodes_[root].value;
  if (root_value.rows() != 1 || root_value.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "backward root must be a scalar");
  }
  for (auto& n : nodes_) {
    n.grad = Matrix();
    if (n.param != nullptr) n.param->grad = Matrix(n.param->value.rows(), n.param->value.cols());
  }
  grad_of(root)(0, 0) = 1.0;

  for (std::size_t idx = root + 1; idx-- > 0;) {
    if (nodes_[idx].grad.empty()) continue;  // not on a path to root
    // Copies of the small header fields; grad_of() may touch other nodes.
    const Primitive op = nodes_[idx].op;
    const NodeId ia = nodes_[idx].a;
    const NodeId ib = nodes_[idx].b;
    const double scalar = nodes_[idx].scalar;
    const Matrix& g = nodes_[idx].grad;
    const Matrix& y = nodes_[idx].value;

    switch (op) {
      case Primitive::Constant: break;
      case Primitive::Param: {
        auto& pg = nodes_[idx].param->grad;
        for (std::size_t i = 0; i < g.size(); ++i) pg.data()[i] += g.data()[i];
        break;
      }
      case Primitive::MatMul: {
        const Matrix& a = nodes_[ia].value;
        const Matrix& b = nodes_[ib].value;
        Matrix ga = matmul_transposed(g, b);
        Matrix gb = selip::matmul(a.transposed(), g);
        auto& da = grad_of(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) da.data()[i] += ga.data()[i];
        auto& db = grad_of(ib);
        for (std::size_t i = 0; i < gb.size(); ++i) db.data()[i] += gb.data()[i];
        break;
      }
      case Primitive::Transpose: {
        auto& da = grad_of(ia);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) da(c, r) += g(r, c);
        }
        break;
      }
      case Primitive::Add:
      case Primitive::Sub: {
        const double sign = op == Primitive::Add ? 1.0 : -1.0;
        auto& da = grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i];
        auto& db = grad_of(ib);
        for (std::size_t i = 0; i < g.size(); ++i) db.data()[i] += sign * g.data()[i];
        break;
      }
      case Primitive::Mul: {
        const auto& va = nodes_[ia].value.data();
        const auto& vb = nodes_[ib].value.data();
        auto& da = grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i] * vb[i];
        auto& db = grad_of(ib);
        for (std::size_t i = 0; i < g.size(); ++i) db.data()[i] += g.data()[i] * va[i];
        break;
      }
      case Primitive::AddRow: {
        auto& da = grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i];
        auto& db = grad_of(ib);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) db(0, c) += g(r, c);
        }
        break;
      }
      case Primitive::Scale: {
        auto& da = grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i] * scalar;
        break;
      }
      case Primitive::DivScalar: {
        auto& da = grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i] / scalar;
        break;
      }
      case Primitive::Exp: {
        auto& da = grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i] * y.data()[i];
        break;
      }
      case Primitive::Log: {
        const auto& va = nodes_[ia].value.data();
        auto& da = grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i] / va[i];
        break;
      }
      case Primitive::Tanh: {
        auto& da = grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double t = y.data()[i];
          da.data()[i] += g.data()[i] * (1.0 - t * t);
        }
        break;
      }
      case Primitive::RowSoftmax: {
        auto& da = grad_of(ia);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const auto gr = g.row(r);
          const auto yr = y.row(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < gr.size(); ++c) dot += gr[c] * yr[c];
          auto dr = da.row(r);
          for (std::size_t c = 0; c < gr.size(); ++c) dr[c] += yr[c] * (gr[c] - dot);
        }
        break;
      }
      case Primitive::RowLogSoftmax: {
        auto& da = grad_of(ia);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const auto gr = g.row(r);
          const auto yr = y.row(r);
          double total = 0.0;
          for (double v : gr) total += v;
          auto dr = da.row(r);
          for (std::size_t c = 0; c < gr.size(); ++c) dr[c] += gr[c] - std::exp(yr[c]) * total;
        }
        break;
      }
      case Primitive::RowL2Norm: {
        const Matrix& a = nodes_[ia].value;
        auto& da = grad_of(ia);
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const double scale = g(r, 0) / y(r, 0);
          const auto ar = a.row(r);
          auto dr = da.row(r);
          for (std::size_t c = 0; c < ar.size(); ++c) dr[c] += scale * ar[c];
        }
        break;
      }
      case Primitive::DivRows: {
        const Matrix& a = nodes_[ia].value;
        const Matrix& n = nodes_[ib].value;
        {
          auto& da = grad_of(ia);
          for (std::size_t r = 0; r < a.rows(); ++r) {
            const auto gr = g.row(r);
            auto dr = da.row(r);
            for (std::size_t c = 0; c < gr.size(); ++c) dr[c] += gr[c] / n(r, 0);
          }
        }
        auto& dn = grad_of(ib);
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const auto gr = g.row(r);
          const auto ar = a.row(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < gr.size(); ++c) dot += gr[c] * ar[c];
          dn(r, 0) -= dot / (n(r, 0) * n(r, 0));
        }
        break;
      }
      case Primitive::Sum: {
        auto& da = grad_of(ia);
        for (double& v : da.data()) v += g(0, 0);
        break;
      }
      case Primitive::Mean: {
        auto& da = grad_of(ia);
        const double share = g(0, 0) / static_cast<double>(da.size());
        for (double& v : da.data()) v += share;
        break;
      }
    }
  }
}

double finite_diff_check(const std::function<double()>& f, std::span<Parameter* const> params, double h) {
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidConfig, "finite difference step must be positive", "h");
  double worst = 0.0;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = f();
      x = saved - h;
      const double down = f();
      x = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw Error(ErrorCode::NonFiniteValue, "objective is not finite near " + p->name + "[" + std::to_string(i) + "]",
                    p->name);
      }
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace selip
