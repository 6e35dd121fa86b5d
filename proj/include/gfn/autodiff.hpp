#pragma once

// Minimal reverse-mode differentiation: a Tape records every operation as a
// node holding its value and a vector-Jacobian rule. Nodes are appended in
// evaluation order, so walking them backwards is a reverse topological order
// and each node is visited exactly once.

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gfn/tensor.hpp"

namespace gfn::inline GFN_ABI {

/// Named learnable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_)
      : name(std::move(name_)), value(std::move(value_)),
        grad(Tensor::zeros_like(value)) {}

  void zero_grad() { grad.fill(Real(0)); }
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  /// Receives the gradient flowing into the node and pushes contributions to
  /// its inputs through Tape::accumulate.
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value with no gradient.
  Var constant(Tensor value);
  /// Value whose gradient is tracked (e.g. the input of a gradient check).
  Var leaf(Tensor value);
  /// Node bound to a parameter; the same parameter maps to a single node.
  Var param(Parameter& p);

  /// Appends an op node. The backward rule is kept only when some input
  /// requires a gradient.
  Var record(const char* op, Tensor value, std::vector<int> inputs,
             Backward backward);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Adds g into the gradient buffer of node id (no-op when it needs none).
  void accumulate(int id, const Tensor& g);

  /// Seeds d(loss)/d(loss) = 1 and runs every backward rule once in reverse
  /// creation order, then adds node gradients into bound parameters.
  void backward(Var loss);

  /// Gradient of the last backward pass with respect to a node (zeros if the
  /// node received none).
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  bool bound(const Parameter& p) const { return param_nodes_.contains(&p); }

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<int> inputs;
    Backward backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);

  // A deque keeps references from value() valid while more nodes are added.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool ran_backward_ = false;
};

struct BackpropResult {
  /// Parameters that were not reachable on the tape (gradient left at zero).
  std::vector<std::string> unreachable;
};

/// Zeroes every parameter gradient, back-propagates the scalar loss, and
/// reports (with a warning) parameters that never appeared on the tape.
BackpropResult backprop(Tape& tape, Var loss, std::span<Parameter* const> params);

}  // namespace gfn::inline GFN_ABI
