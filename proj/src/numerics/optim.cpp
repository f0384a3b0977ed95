#include "casdet/numerics/optim.hpp"

#include <cmath>

#include "casdet/error.hpp"

namespace casdet::numerics {

Parameter make_parameter(std::string name, Tensor init) {
  return Parameter{std::move(name), Var::leaf(std::move(init), true)};
}

namespace {

void update(std::span<const Parameter> params, double lr, double momentum,
            double weight_decay, std::vector<std::vector<double>>& velocity) {
  for (const Parameter& p : params) {
    if (!p.var.value().has_grad()) {
      throw Error("parameter '" + p.name + "' has no gradient");
    }
  }
  if (velocity.empty()) {
    for (const Parameter& p : params) velocity.emplace_back(p.var.value().numel(), 0.0);
  }
  if (velocity.size() != params.size()) {
    throw Error("optimizer state holds " + std::to_string(velocity.size()) +
                " buffers but " + std::to_string(params.size()) +
                " parameters were given");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i].var.node()->value;
    auto w = t.data();
    auto g = t.grad();
    auto& v = velocity[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum * v[j] + g[j] + weight_decay * w[j];
      w[j] -= lr * v[j];
    }
    t.zero_grad();
  }
}

}  // namespace

void Sgd::step(std::span<const Parameter> params) {
  update(params, lr_, momentum_, weight_decay_, velocity_);
}

void sgd_step(std::span<const Parameter> params, double lr, double momentum,
              std::vector<std::vector<double>>& velocity) {
  update(params, lr, momentum, 0.0, velocity);
}

void zero_grads(std::span<const Parameter> params) {
  for (const Parameter& p : params) p.var.node()->value.zero_grad();
}

double grad_norm(std::span<const Parameter> params) {
  double acc = 0.0;
  for (const Parameter& p : params) {
    const Tensor& t = p.var.value();
    if (!t.has_grad()) continue;
    for (double g : t.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

}  // namespace casdet::numerics
