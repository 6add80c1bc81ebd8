#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "magfield/nn/tensor.hpp"

namespace magfield::nn {

template <class T>
class Var;

template <class T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  std::vector<Var<T>> inputs;
  /// Maps the gradient of this node to gradients of `inputs` (null Var for
  /// inputs that receive none). Built from Var ops so it can be recorded.
  std::function<std::vector<Var<T>>(const Var<T>&)> backward;
};

/// Handle to a value in the computation graph.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  explicit operator bool() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  Node<T>* node() const noexcept { return node_.get(); }
  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Whether new ops record their inputs. Off inside backward passes that do
/// not build a graph and during inference.
bool grad_enabled();

class GradMode {
 public:
  explicit GradMode(bool enabled);
  ~GradMode();
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool previous_;
};

/// Gradients of the scalar `output` with respect to `inputs`. With
/// create_graph the returned gradients are themselves differentiable.
/// Inputs the output does not depend on receive zeros.
template <class T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs,
                         bool create_graph = false);

/// Records a node when grad mode is on and some input requires a gradient.
template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<std::vector<Var<T>>(const Var<T>&)> backward);

}  // namespace magfield::nn
