#include "bsde/autodiff.hpp"

#include <stdexcept>
#include <string>

namespace bsde {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string("tape ") + op + ": operand shapes differ");
}

}  // namespace

NodeId Tape::push(Record record) {
  records_.push_back(std::move(record));
  return NodeId{records_.size() - 1};
}

const Tape::Record& Tape::at(NodeId n) const {
  if (n.index >= records_.size()) throw std::out_of_range("tape: node index out of range");
  return records_[n.index];
}

NodeId Tape::variable(Matrix value) {
  Record r;
  r.value = std::move(value);
  r.requires_grad = true;
  return push(std::move(r));
}

NodeId Tape::constant(Matrix value) {
  Record r;
  r.value = std::move(value);
  return push(std::move(r));
}

NodeId Tape::affine(NodeId weights, NodeId bias, NodeId x) {
  const auto& w = at(weights).value;
  const auto& b = at(bias).value;
  const auto& in = at(x).value;
  if (w.cols() != in.rows() || b.rows() != w.rows() || b.cols() != 1)
    throw std::invalid_argument("tape affine: shape mismatch");
  Record r;
  r.kind = OpKind::affine;
  r.inputs = {weights, bias, x};
  r.value.noalias() = w * in;
  r.value.colwise() += b.col(0);
  r.requires_grad = at(weights).requires_grad || at(bias).requires_grad || at(x).requires_grad;
  return push(std::move(r));
}

NodeId Tape::relu(NodeId a) {
  Record r;
  r.kind = OpKind::relu;
  r.inputs = {a};
  r.value = at(a).value.cwiseMax(0.0);
  r.requires_grad = at(a).requires_grad;
  return push(std::move(r));
}

NodeId Tape::add(NodeId a, NodeId b) {
  require_same_shape(at(a).value, at(b).value, "add");
  Record r;
  r.kind = OpKind::add;
  r.inputs = {a, b};
  r.value = at(a).value + at(b).value;
  r.requires_grad = at(a).requires_grad || at(b).requires_grad;
  return push(std::move(r));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  require_same_shape(at(a).value, at(b).value, "sub");
  Record r;
  r.kind = OpKind::sub;
  r.inputs = {a, b};
  r.value = at(a).value - at(b).value;
  r.requires_grad = at(a).requires_grad || at(b).requires_grad;
  return push(std::move(r));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  require_same_shape(at(a).value, at(b).value, "mul");
  Record r;
  r.kind = OpKind::mul;
  r.inputs = {a, b};
  r.value = at(a).value.cwiseProduct(at(b).value);
  r.requires_grad = at(a).requires_grad || at(b).requires_grad;
  return push(std::move(r));
}

NodeId Tape::scale(NodeId a, double factor) {
  Record r;
  r.kind = OpKind::scale;
  r.inputs = {a};
  r.factor = factor;
  r.value = factor * at(a).value;
  r.requires_grad = at(a).requires_grad;
  return push(std::move(r));
}

NodeId Tape::square(NodeId a) {
  Record r;
  r.kind = OpKind::square;
  r.inputs = {a};
  r.value = at(a).value.array().square().matrix();
  r.requires_grad = at(a).requires_grad;
  return push(std::move(r));
}

NodeId Tape::sum_rows(NodeId a) {
  Record r;
  r.kind = OpKind::sum_rows;
  r.inputs = {a};
  r.value = at(a).value.colwise().sum();
  r.requires_grad = at(a).requires_grad;
  return push(std::move(r));
}

NodeId Tape::mean(NodeId a) {
  const auto& v = at(a).value;
  if (v.size() == 0) throw std::invalid_argument("tape mean: empty operand");
  Record r;
  r.kind = OpKind::mean;
  r.inputs = {a};
  r.value = Matrix::Constant(1, 1, v.mean());
  r.requires_grad = at(a).requires_grad;
  return push(std::move(r));
}

NodeId Tape::variance(NodeId a) {
  const auto& v = at(a).value;
  if (v.size() < 2) throw std::invalid_argument("tape variance: needs at least 2 entries");
  Record r;
  r.kind = OpKind::variance;
  r.inputs = {a};
  r.value = Matrix::Constant(1, 1, (v.array() - v.mean()).square().mean());
  r.requires_grad = at(a).requires_grad;
  return push(std::move(r));
}

NodeId Tape::maximum(NodeId a, NodeId b) {
  require_same_shape(at(a).value, at(b).value, "maximum");
  Record r;
  r.kind = OpKind::maximum;
  r.inputs = {a, b};
  r.value = at(a).value.cwiseMax(at(b).value);
  r.requires_grad = at(a).requires_grad || at(b).requires_grad;
  return push(std::move(r));
}

NodeId Tape::pointwise(const std::vector<NodeId>& inputs, Matrix value, std::vector<Matrix> partials) {
  if (inputs.size() != partials.size())
    throw std::invalid_argument("tape pointwise: one partial per input required");
  Record r;
  r.kind = OpKind::pointwise;
  r.inputs = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& in = at(inputs[k]).value;
    require_same_shape(in, partials[k], "pointwise");
    if (in.cols() != value.cols() || (in.rows() != value.rows() && value.rows() != 1))
      throw std::invalid_argument("tape pointwise: input not broadcast-compatible with output");
    r.requires_grad = r.requires_grad || at(inputs[k]).requires_grad;
  }
  r.value = std::move(value);
  r.partials = std::move(partials);
  return push(std::move(r));
}

void Tape::backward(NodeId loss) {
  const auto& v = at(loss).value;
  if (v.rows() != 1 || v.cols() != 1) throw std::invalid_argument("backward: loss must be scalar");
  backward(loss, Matrix::Ones(1, 1));
}

void Tape::backward(NodeId output, const Matrix& seed) {
  require_same_shape(at(output).value, seed, "backward seed");
  adjoints_.assign(records_.size(), Matrix());
  for (std::size_t i = 0; i < records_.size(); ++i)
    if (records_[i].requires_grad)
      adjoints_[i] = Matrix::Zero(records_[i].value.rows(), records_[i].value.cols());
  if (!records_[output.index].requires_grad) return;
  adjoints_[output.index] = seed;

  for (std::size_t idx = output.index + 1; idx-- > 0;) {
    const Record& r = records_[idx];
    if (!r.requires_grad || r.kind == OpKind::leaf) continue;
    const Matrix& g = adjoints_[idx];
    auto needs = [&](std::size_t k) { return records_[r.inputs[k].index].requires_grad; };
    auto adj = [&](std::size_t k) -> Matrix& { return adjoints_[r.inputs[k].index]; };

    switch (r.kind) {
      case OpKind::affine: {
        const Matrix& w = records_[r.inputs[0].index].value;
        const Matrix& x = records_[r.inputs[2].index].value;
        if (needs(0)) adj(0).noalias() += g * x.transpose();
        if (needs(1)) adj(1) += g.rowwise().sum();
        if (needs(2)) adj(2).noalias() += w.transpose() * g;
        break;
      }
      case OpKind::relu:
        // Subgradient 0 at the kink.
        adj(0) += (r.value.array() > 0.0).select(g, 0.0);
        break;
      case OpKind::add:
        if (needs(0)) adj(0) += g;
        if (needs(1)) adj(1) += g;
        break;
      case OpKind::sub:
        if (needs(0)) adj(0) += g;
        if (needs(1)) adj(1) -= g;
        break;
      case OpKind::mul:
        if (needs(0)) adj(0) += g.cwiseProduct(records_[r.inputs[1].index].value);
        if (needs(1)) adj(1) += g.cwiseProduct(records_[r.inputs[0].index].value);
        break;
      case OpKind::scale:
        adj(0) += r.factor * g;
        break;
      case OpKind::square:
        adj(0) += 2.0 * g.cwiseProduct(records_[r.inputs[0].index].value);
        break;
      case OpKind::sum_rows:
        adj(0).rowwise() += g.row(0);
        break;
      case OpKind::mean: {
        const auto n = static_cast<double>(records_[r.inputs[0].index].value.size());
        adj(0).array() += g(0, 0) / n;
        break;
      }
      case OpKind::variance: {
        const Matrix& in = records_[r.inputs[0].index].value;
        const auto n = static_cast<double>(in.size());
        adj(0).array() += (2.0 * g(0, 0) / n) * (in.array() - in.mean());
        break;
      }
      case OpKind::maximum: {
        const Matrix& a = records_[r.inputs[0].index].value;
        const Matrix& b = records_[r.inputs[1].index].value;
        if (needs(0)) adj(0) += (a.array() >= b.array()).select(g, 0.0);
        if (needs(1)) adj(1) += (a.array() >= b.array()).select(0.0, g);
        break;
      }
      case OpKind::pointwise:
        for (std::size_t k = 0; k < r.inputs.size(); ++k) {
          if (!needs(k)) continue;
          const Matrix& p = r.partials[k];
          if (p.rows() == g.rows())
            adj(k) += p.cwiseProduct(g);
          else
            adj(k) += (p.array().rowwise() * g.row(0).array()).matrix();
        }
        break;
      case OpKind::leaf:
        break;
    }
  }
}

}  // namespace bsde
