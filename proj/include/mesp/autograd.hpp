#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "mesp/tensor.hpp"

namespace mesp {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order because every input exists before its consumer. One tape
// serves one forward/backward pair and is not shared between threads.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  // With record_gradients=false no backward closures are kept; backward()
  // then yields zero gradients. Used for inference.
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  // Appends an op output. `backward` is kept only if some input requires grad.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  bool recording() const noexcept { return recording_; }

  // Adds `grad` into the pending gradient of `v`; ignored for values that do
  // not require grad. Only meaningful inside a backward closure.
  void accumulate(Var v, const Tensor& grad);
  void accumulate(Var v, Tensor&& grad);

  // Runs reverse accumulation from a single-element `loss` and returns one
  // gradient per leaf, in leaf registration order. Unused leaves get zeros.
  std::vector<Tensor> backward(Var loss);

  // Gradient of a leaf after backward().
  const Tensor& grad(Var leaf) const;

  const std::vector<Var>& leaves() const noexcept { return leaves_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  void check_owned(Var v) const;

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<Var> leaves_;
  std::vector<Tensor> grads_;
  std::vector<Tensor> leaf_grads_;
};

// Differentiable counterparts of the core tensor algebra.
Var reshape(Var x, Shape new_shape);
Var permute(Var x, std::span<const std::int64_t> axis_order);
Var permute(Var x, std::initializer_list<std::int64_t> axis_order);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var x, float factor);
Var abs(Var x);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);

}  // namespace mesp
