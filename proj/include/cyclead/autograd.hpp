#pragma once

// Minimal tape-free reverse-mode differentiation. Every operation result keeps
// shared ownership of its inputs; calling backward() on a scalar walks the
// graph in reverse topological order and accumulates into leaf gradients.

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "cyclead/tensor.hpp"

namespace cyclead {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void()> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.shape() == node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor<T>(); }
  T item() const { return node_->value.item(); }

  Var detach() const { return constant(node_->value); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Seeds d(self)/d(self) = 1; self must be a scalar.
  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op result. The backward closure receives the output node's
// gradient and the input nodes; it is dropped when no input needs a gradient.
template <typename T, typename Fn>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, Fn&& backward) {
  auto out = std::make_shared<Node<T>>();
  out->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return Var<T>(std::move(out));
  out->requires_grad = true;
  out->inputs.reserve(inputs.size());
  for (auto& in : inputs) out->inputs.push_back(in.node());
  Node<T>* self = out.get();
  out->backward_fn = [self, fn = std::forward<Fn>(backward)]() mutable {
    fn(self->grad, self->inputs);
  };
  return Var<T>(std::move(out));
}

extern template class Var<float>;
extern template class Var<double>;

}  // namespace cyclead
