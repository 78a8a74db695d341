#include "mesp/autograd.hpp"

#include <cmath>

#include "mesp/error.hpp"

namespace mesp {

const Tensor& Var::value() const {
  if (!valid()) fail(ErrorKind::kInvalidState, "use of an unbound Var");
  return tape->value(*this);
}

void Tape::check_owned(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    fail(ErrorKind::kInvalidState, "value does not belong to this tape");
  }
}

Var Tape::leaf(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = recording_;
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  Var v{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  leaves_.push_back(v);
  return v;
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  if (recording_) {
    for (const Var& in : inputs) {
      check_owned(in);
      if (nodes_[static_cast<std::size_t>(in.id)].requires_grad) {
        node.requires_grad = true;
        break;
      }
    }
    if (node.requires_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[static_cast<std::size_t>(v.id)].requires_grad;
}

void Tape::accumulate(Var v, const Tensor& grad) {
  check_owned(v);
  const auto i = static_cast<std::size_t>(v.id);
  if (!nodes_[i].requires_grad) return;
  check_same_shape(nodes_[i].value, grad, "gradient accumulation");
  if (grads_[i].empty()) {
    grads_[i] = grad;
  } else {
    add_into(grads_[i], grad);
  }
}

void Tape::accumulate(Var v, Tensor&& grad) {
  check_owned(v);
  const auto i = static_cast<std::size_t>(v.id);
  if (!nodes_[i].requires_grad) return;
  check_same_shape(nodes_[i].value, grad, "gradient accumulation");
  if (grads_[i].empty()) {
    grads_[i] = std::move(grad);
  } else {
    add_into(grads_[i], grad);
  }
}

std::vector<Tensor> Tape::backward(Var loss) {
  check_owned(loss);
  if (value(loss).numel() != 1) {
    fail(ErrorKind::kInvalidState, "backward requires a single-element loss, got shape " +
                                       shape_to_string(value(loss).shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  const auto start = static_cast<std::size_t>(loss.id);
  if (nodes_[start].requires_grad) {
    grads_[start] = Tensor::full(nodes_[start].value.shape(), 1.0f);
  }
  for (std::size_t i = start + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (grads_[i].empty() || !node.backward) continue;
    // The closure may accumulate into earlier nodes only; this node's own
    // gradient is final at this point.
    const Tensor grad_out = std::move(grads_[i]);
    grads_[i] = Tensor();
    node.backward(*this, grad_out);
  }

  leaf_grads_.clear();
  leaf_grads_.reserve(leaves_.size());
  for (const Var& leaf : leaves_) {
    const auto i = static_cast<std::size_t>(leaf.id);
    leaf_grads_.push_back(grads_[i].empty() ? Tensor::zeros(nodes_[i].value.shape())
                                            : grads_[i]);
  }
  // Intermediate gradients are not needed after the sweep.
  grads_.clear();
  return leaf_grads_;
}

const Tensor& Tape::grad(Var leaf) const {
  check_owned(leaf);
  for (std::size_t k = 0; k < leaves_.size(); ++k) {
    if (leaves_[k].id == leaf.id) {
      if (k >= leaf_grads_.size()) {
        fail(ErrorKind::kInvalidState, "grad() called before backward()");
      }
      return leaf_grads_[k];
    }
  }
  fail(ErrorKind::kInvalidState, "grad() requested for a non-leaf value");
}

Var reshape(Var x, Shape new_shape) {
  const Shape old_shape = x.shape();
  Tensor out = reshape(x.value(), std::move(new_shape));
  return x.tape->record(std::move(out), {x}, [x, old_shape](Tape& tape, const Tensor& g) {
    tape.accumulate(x, reshape(g, old_shape));
  });
}

Var permute(Var x, std::span<const std::int64_t> axis_order) {
  std::vector<std::int64_t> inverse = inverse_permutation(axis_order);
  Tensor out = permute(x.value(), axis_order);
  return x.tape->record(std::move(out), {x}, [x, inverse](Tape& tape, const Tensor& g) {
    tape.accumulate(x, permute(g, std::span<const std::int64_t>(inverse)));
  });
}

Var permute(Var x, std::initializer_list<std::int64_t> axis_order) {
  std::vector<std::int64_t> order(axis_order);
  return permute(x, std::span<const std::int64_t>(order));
}

Var add(Var a, Var b) {
  Tensor out = add(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g);
    if (tape.requires_grad(b)) tape.accumulate(b, scale(g, -1.0f));
  });
}

Var hadamard(Var a, Var b) {
  Tensor out = hadamard(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    if (tape.requires_grad(a)) tape.accumulate(a, hadamard(g, b.value()));
    if (tape.requires_grad(b)) tape.accumulate(b, hadamard(g, a.value()));
  });
}

Var scale(Var x, float factor) {
  Tensor out = scale(x.value(), factor);
  return x.tape->record(std::move(out), {x}, [x, factor](Tape& tape, const Tensor& g) {
    tape.accumulate(x, scale(g, factor));
  });
}

Var abs(Var x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(x.value()[i]);
  return x.tape->record(std::move(out), {x}, [x](Tape& tape, const Tensor& g) {
    const Tensor& v = x.value();
    Tensor dx(v.shape());
    for (std::int64_t i = 0; i < dx.numel(); ++i) {
      dx[i] = v[i] > 0.0f ? g[i] : (v[i] < 0.0f ? -g[i] : 0.0f);
    }
    tape.accumulate(x, std::move(dx));
  });
}

Var square(Var x) {
  Tensor out = hadamard(x.value(), x.value());
  return x.tape->record(std::move(out), {x}, [x](Tape& tape, const Tensor& g) {
    const Tensor& v = x.value();
    Tensor dx(v.shape());
    for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] = 2.0f * v[i] * g[i];
    tape.accumulate(x, std::move(dx));
  });
}

Var sum(Var x) {
  Tensor out = Tensor::scalar(static_cast<float>(sum(x.value())));
  return x.tape->record(std::move(out), {x}, [x](Tape& tape, const Tensor& g) {
    tape.accumulate(x, Tensor::full(x.shape(), g[0]));
  });
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().numel());
  Tensor out = Tensor::scalar(static_cast<float>(sum(x.value()) / n));
  return x.tape->record(std::move(out), {x}, [x, n](Tape& tape, const Tensor& g) {
    tape.accumulate(x, Tensor::full(x.shape(), static_cast<float>(g[0] / n)));
  });
}

}  // namespace mesp
