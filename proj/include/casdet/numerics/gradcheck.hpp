#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "casdet/numerics/autograd.hpp"

namespace casdet::numerics {

struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Maps leaf variables (one per input tensor, all requiring grad) to a
// single-element loss.
using ScalarFn = std::function<Var(std::span<const Var>)>;

inline constexpr double kFiniteDiffStep = 1e-6;

// Compares analytic gradients of `fn` with central differences
// (f(x+eps) - f(x-eps)) / 2eps for every element of every input. The relative
// error of one element is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport finite_diff_check(const std::string& op_name,
                                  const ScalarFn& fn,
                                  const std::vector<Tensor>& inputs,
                                  double tolerance,
                                  double eps = kFiniteDiffStep);

// Folds several reports of the same op into one (worst error wins).
GradCheckReport merge_reports(std::span<const GradCheckReport> reports);

}  // namespace casdet::numerics
