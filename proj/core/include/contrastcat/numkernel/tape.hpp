#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "contrastcat/numkernel/matrix.hpp"

namespace ccat::nk {

class Tape;

/// Handle to a value recorded on a Tape. Only meaningful for the tape that
/// produced it.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode computation tape.
///
/// Every op appends a node holding its forward value and, when any input
/// requires a gradient, a closure that pushes the node's gradient into its
/// inputs. backward() replays closures in reverse recording order, which is a
/// valid topological order because nodes can only reference earlier nodes.
///
/// A tape is single-use: after backward() the closures are released, values
/// and gradients stay readable, and further recording or a second backward()
/// throws StateError. Tapes are confined to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Owned leaf that never receives a gradient.
  Var constant(Matrix value);
  /// Owned leaf that receives a gradient.
  Var variable(Matrix value);
  /// Leaf referring to an external matrix (typically a weight) without
  /// copying it. The referenced matrix must outlive the tape.
  Var parameter(const Matrix& value, bool requires_grad);

  /// Appends an op node. The closure is dropped when no input requires a
  /// gradient, so inference-only passes pay nothing for bookkeeping.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient of the backward() output with respect to v. Nodes that were not
  /// reached get an all-zero matrix of the right shape.
  const Matrix& grad(Var v) const;

  /// Mutable gradient slot, allocated on first use. For op closures.
  Matrix& grad_slot(Var v);

  /// Seeds d(out)/d(out) = 1 and propagates. out must be 1x1.
  void backward(Var out);

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(Node node);
  void require_recording() const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace ccat::nk
