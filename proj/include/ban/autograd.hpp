#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "ban/tensor.hpp"

namespace ban {

// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

// Linear record of eagerly evaluated operations. Nodes are appended in
// evaluation order, so reverse index order is a valid topological order for
// the backward sweep. A tape supports exactly one backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Var constant(Tensor value);
  Var parameter(Tensor value);
  // Appends an op result. `fn` is dropped when no input requires a gradient.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  // Gradient accumulated at `v`; zeros when nothing reached it.
  Tensor grad(Var v) const;

  // Lazily allocated, zero-initialised gradient buffer for backward fns.
  // Returns nullptr when `v` does not require a gradient.
  Tensor* grad_sink(Var v);
  void accumulate(Var v, const Tensor& g);

  // Seeds the root with ones (any shape) and sweeps once.
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;
  };
  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool swept_ = false;
};

}  // namespace ban
