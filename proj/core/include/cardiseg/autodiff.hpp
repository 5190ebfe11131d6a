#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "cardiseg/tensor.hpp"

namespace cardiseg {

enum class Mode { kTrain, kInfer };

/// A named value that persists across tapes (weights, biases, running statistics).
/// Gradients from every tape the parameter is bound to accumulate into `grad`.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool is_trainable = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(is_trainable) {}

  void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t index() const noexcept { return index_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Gradient accumulated by the last backward pass; empty when none reached this value.
  const Tensor<T>& grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Ordered record of executed operations. Nodes are appended in execution
/// order, which is a topological order of the dataflow graph, so a backward
/// pass is a single reverse sweep that visits every node once.
template <typename T>
class Tape {
 public:
  /// Receives the gradient of the loss with respect to the node's output.
  using BackwardFn = std::function<void(const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value) { return push_owned(std::move(value), false); }

  /// Leaf referencing an external tensor without copying; never receives a gradient.
  /// The referenced tensor must outlive the tape.
  Var<T> constant_ref(const Tensor<T>& value) {
    Node& n = nodes_.emplace_back();
    n.value = &value;
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Leaf whose gradient is kept on the tape (readable through Var::grad()).
  Var<T> input(Tensor<T> value) { return push_owned(std::move(value), true); }

  /// Leaf bound to a persistent parameter; the value is referenced, not copied.
  Var<T> parameter(Parameter<T>& p) {
    Node& n = nodes_.emplace_back();
    n.value = &p.value;
    n.requires_grad = p.trainable;
    if (p.trainable) n.grad = &p.grad;
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Result of an operation. `backward` is dropped when no parent needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || requires_grad(p.index());
    Var<T> out = push_owned(std::move(value), needs);
    if (needs) nodes_[out.index()].backward = std::move(backward);
    return out;
  }

  const Tensor<T>& value(std::size_t i) const { return *nodes_.at(i).value; }
  bool requires_grad(std::size_t i) const { return nodes_.at(i).requires_grad; }

  /// Gradient buffer for node i, zero-initialised on first use. Only valid for
  /// nodes with requires_grad; backward closures accumulate into it.
  Tensor<T>& grad_buffer(std::size_t i) {
    Node& n = nodes_.at(i);
    if (n.grad == nullptr) {
      n.own_grad = Tensor<T>(n.value->shape());
      n.grad = &n.own_grad;
    } else if (n.grad->empty()) {
      *n.grad = Tensor<T>(n.value->shape());
    }
    return *n.grad;
  }

  const Tensor<T>& grad(std::size_t i) const {
    static const Tensor<T> kEmpty;
    const Node& n = nodes_.at(i);
    return n.grad != nullptr ? *n.grad : kEmpty;
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(const Var<T>& loss) {
    if (loss.value().size() != 1) {
      throw ShapeError("backward requires a scalar loss, got " + shape_to_string(loss.shape()));
    }
    if (!requires_grad(loss.index())) return;
    grad_buffer(loss.index())[0] += T{1};
    for (std::size_t i = loss.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad == nullptr) continue;
      n.backward(*n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> own_value;
    const Tensor<T>* value = nullptr;
    Tensor<T> own_grad;
    Tensor<T>* grad = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push_owned(Tensor<T> value, bool requires_grad) {
    Node& n = nodes_.emplace_back();
    n.own_value = std::move(value);
    n.value = &n.own_value;
    n.requires_grad = requires_grad;
    return Var<T>(this, nodes_.size() - 1);
  }

  // deque: node addresses stay valid while the tape grows.
  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(index_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(index_);
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return tape_->grad(index_);
}

}  // namespace cardiseg
