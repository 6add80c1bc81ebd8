#include "magfield/nn/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

#include "magfield/error.hpp"
#include "magfield/nn/ops.hpp"

namespace magfield::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

GradMode::GradMode(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradMode::~GradMode() { g_grad_enabled = previous_; }

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<std::vector<Var<T>>(const Var<T>&)> backward) {
  bool record = false;
  if (g_grad_enabled) {
    for (const auto& v : inputs) record = record || v.requires_grad();
  }
  if (!record) return Var<T>(std::move(value), false);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  return Var<T>::from_node(std::move(node));
}

template <class T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs,
                         bool create_graph) {
  if (!output || output.shape().size() != 1) {
    throw ContractError("grad: output must be a scalar");
  }
  // Post-order over the recorded subgraph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  if (output.requires_grad()) {
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{output.node(), 0}};
    visited.insert(output.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<T>* child = node->inputs[next++].node();
        if (child && child->requires_grad && visited.insert(child).second) {
          stack.emplace_back(child, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::unordered_set<Node<T>*> wanted;
  for (const auto& v : inputs) wanted.insert(v.node());

  std::unordered_map<Node<T>*, Var<T>> acc;
  acc[output.node()] = Var<T>(Tensor<T>(output.shape(), T(1)), false);
  GradMode mode(create_graph);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    auto found = acc.find(node);
    if (found == acc.end()) continue;
    if (!node->backward) continue;
    const Var<T> g = found->second;
    if (!wanted.count(node)) acc.erase(found);
    const auto grads = node->backward(g);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Var<T>& in = node->inputs[i];
      if (!in.requires_grad() || i >= grads.size() || !grads[i]) continue;
      auto& slot = acc[in.node()];
      slot = slot ? add(slot, grads[i]) : grads[i];
    }
  }

  std::vector<Var<T>> out;
  out.reserve(inputs.size());
  for (const auto& v : inputs) {
    auto found = acc.find(v.node());
    out.push_back(found != acc.end() ? found->second : zeros<T>(v.shape()));
  }
  return out;
}

#define MAGFIELD_INSTANTIATE(T)                                                          \
  template Var<T> make_op<T>(Tensor<T>, std::vector<Var<T>>,                             \
                             std::function<std::vector<Var<T>>(const Var<T>&)>);        \
  template std::vector<Var<T>> grad<T>(const Var<T>&, const std::vector<Var<T>>&, bool);
MAGFIELD_INSTANTIATE(float)
MAGFIELD_INSTANTIATE(double)
MAGFIELD_INSTANTIATE(long double)
#undef MAGFIELD_INSTANTIATE

}  // namespace magfield::nn
