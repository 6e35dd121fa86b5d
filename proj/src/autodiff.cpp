#include "gfn/autodiff.hpp"

namespace gfn::inline GFN_ABI {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Node node) {
  if (ran_backward_) {
    throw ConfigError("tape: cannot record after backward()");
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var{this, it->second};
  }
  Node n;
  n.op = "param";
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Tape::record(const char* op, Tensor value, std::vector<int> inputs,
                 Backward backward) {
  if (check_finite_enabled() && !value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (int id : inputs) {
    if (nodes_[id].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  return push(std::move(n));
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw ConfigError(std::string("gradient shape ") + to_string(g.shape()) +
                      " does not match value shape " +
                      to_string(n.value.shape()) + " of " + n.op);
  }
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad.add_(g);
  }
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ConfigError("backward: loss from another tape");
  if (value(loss).size() != 1) {
    throw ConfigError("backward: loss must be a scalar, got shape " +
                      to_string(value(loss).shape()));
  }
  if (ran_backward_) throw ConfigError("backward: tape already consumed");
  ran_backward_ = true;
  accumulate(loss.id, Tensor(value(loss).shape(), Real(1)));
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) n.param->grad.add_(n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? n.grad : Tensor::zeros_like(n.value);
}

BackpropResult backprop(Tape& tape, Var loss, std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
  tape.backward(loss);
  BackpropResult result;
  for (Parameter* p : params) {
    if (!tape.bound(*p)) {
      warn("parameter '" + p->name + "' is not on the tape; gradient is zero");
      result.unreachable.push_back(p->name);
    }
  }
  return result;
}

}  // namespace gfn::inline GFN_ABI
