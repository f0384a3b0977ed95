#include "casdet/numerics/autograd.hpp"

#include <unordered_set>

#include "casdet/error.hpp"

namespace casdet::numerics {

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return Var(std::move(node));
}

Var make_result(std::string op, Tensor value, std::vector<Var> inputs,
                std::function<void(Node& self)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = std::move(op);
  for (const Var& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
    node->inputs.push_back(in.node_ptr());
  }
  if (node->requires_grad) {
    Node* self = node.get();
    node->backward = [self, fn = std::move(backward)]() { fn(*self); };
  }
  return Var(std::move(node));
}

std::vector<Node*> topological_order(const Var& root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS; graphs can be a few hundred nodes deep.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Var& loss) {
  if (loss.value().numel() != 1) {
    throw DimensionError("backward() needs a single-element loss, got shape " +
                         shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  std::vector<Node*> order = topological_order(loss);
  // Interior gradients start from zero on every pass; leaves accumulate.
  for (Node* n : order) {
    if (n->backward) {
      n->value.clear_grad();
    }
  }
  loss.node()->value.grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->value.has_grad()) n->backward();
  }
}

}  // namespace casdet::numerics
