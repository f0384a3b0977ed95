#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "casdet/numerics/tensor.hpp"

namespace casdet::numerics {

// One vertex of the recorded computation. The gradient lives in value.grad().
// `backward` reads this node's gradient and adds contributions into the
// gradients of `inputs`.
struct Node {
  Tensor value;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void()> backward;
};

// Shared handle to a graph node. Copies alias the same node, which is how
// parameters are reused across many per-image graphs.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  // A leaf. Leaves with requires_grad accumulate gradients across backward
  // calls until zeroed.
  static Var leaf(Tensor value, bool requires_grad);
  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Creates a node computing `value` from `inputs`. The node requires grad iff
// any input does; `backward` is dropped otherwise.
Var make_result(std::string op, Tensor value, std::vector<Var> inputs,
                std::function<void(Node& self)> backward);

// Reverse pass from a single-element tensor seeded with 1.
void backward(const Var& loss);

// Every node reachable from `root`, inputs before consumers.
std::vector<Node*> topological_order(const Var& root);

}  // namespace casdet::numerics
