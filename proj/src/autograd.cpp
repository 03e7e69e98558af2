#include "ban/autograd.hpp"

#include <string>

#include "ban/error.hpp"

namespace ban {

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) throw DimensionError("invalid tape variable");
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw DimensionError("invalid tape variable");
  return nodes_[v.id];
}

Var Tape::constant(Tensor value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
  require_finite(value, "parameter");
  nodes_.push_back(Node{std::move(value), {}, false, true, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  require_finite(value, "forward pass");
  bool needs = false;
  for (auto in : inputs) needs = needs || node(in).needs_grad;
  nodes_.push_back(Node{std::move(value), {}, false, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).needs_grad; }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape());
}

Tensor* Tape::grad_sink(Var v) {
  Node& n = node(v);
  if (!n.needs_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (Tensor* sink = grad_sink(v)) sink->add_(g);
}

void Tape::backward(Var root) { backward(root, Tensor(node(root).value.shape(), Scalar(1))); }

void Tape::backward(Var root, const Tensor& seed) {
  if (swept_) throw Error("autograd", "backward already run on this tape");
  swept_ = true;
  require_same_shape(node(root).value, seed, "backward seed");
  accumulate(root, seed);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    require_finite(n.grad, "backward pass");
    n.backward(*this, n.grad);
  }
  for (auto& n : nodes_)
    if (n.has_grad) require_finite(n.grad, "backward pass");
}

}  // namespace ban
