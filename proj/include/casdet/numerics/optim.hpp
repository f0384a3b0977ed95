#pragma once

#include <span>
#include <string>
#include <vector>

#include "casdet/numerics/autograd.hpp"

namespace casdet::numerics {

// A trainable tensor with a hierarchical name such as
// "stage2.fcm.offset_conv.weight".
struct Parameter {
  std::string name;
  Var var;
};

Parameter make_parameter(std::string name, Tensor init);

// Momentum buffers for a fixed parameter list. The i-th buffer belongs to the
// i-th parameter of every step() call.
class Sgd {
 public:
  Sgd(double lr, double momentum, double weight_decay = 0.0)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  // v <- momentum * v + (grad + weight_decay * w);  w <- w - lr * v.
  // Gradients are zeroed afterwards. Throws if a parameter has no gradient.
  void step(std::span<const Parameter> params);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

// One update with caller-owned momentum buffers (resized on first use).
void sgd_step(std::span<const Parameter> params, double lr, double momentum,
              std::vector<std::vector<double>>& velocity);

void zero_grads(std::span<const Parameter> params);

// L2 norm over all parameter gradients; parameters without a gradient count as
// zero.
double grad_norm(std::span<const Parameter> params);

}  // namespace casdet::numerics
