#include "contrastcat/numkernel/tape.hpp"

#include "contrastcat/util/error.hpp"

namespace ccat::nk {

void Tape::require_recording() const {
  if (consumed_) throw StateError("tape already consumed by backward(); re-run the forward pass");
}

Var Tape::push(Node node) {
  require_recording();
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const Matrix& value, bool requires_grad) {
  Node n;
  n.external = &value;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (Var in : inputs) {
    if (nodes_[in.id].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.external ? *n.external : n.owned;
}

const Matrix& Tape::grad(Var v) const {
  if (!consumed_) throw StateError("gradients are only available after backward()");
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty() && !value(v).empty()) {
    // Unreached node: materialise zeros lazily so callers always get a shape.
    auto& self = const_cast<Node&>(n);
    self.grad = Matrix(value(v).rows(), value(v).cols());
  }
  return n.grad;
}

Matrix& Tape::grad_slot(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = Matrix(value(v).rows(), value(v).cols());
  return n.grad;
}

void Tape::backward(Var out) {
  if (consumed_) throw StateError("backward() called twice on the same tape");
  const Matrix& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) {
    throw StateError("backward() needs a scalar output, got " + v.shape_string());
  }
  consumed_ = true;
  if (!nodes_[out.id].requires_grad) return;
  grad_slot(out)(0, 0) = 1.0;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
  for (Node& n : nodes_) n.backward = nullptr;
}

}  // namespace ccat::nk
