#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "casdet/numerics/gradcheck.hpp"

namespace casdet::verify {

struct GradCheckOptions {
  int instances = 20;  // random instances per op
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  // Doubles the gradient flowing out of each checked op, so every check
  // should fail. Negative control for the checker itself.
  bool inject_fault = false;
};

// Names of the registered differentiable ops, in report order. Every op of
// numerics/ops.hpp except scale_grad (a test hook whose gradient is wrong on
// purpose), plus fcm_forward, focal_loss, smooth_l1 and the full cascade loss.
std::vector<std::string> gradcheck_op_names();

// One merged report per registered op.
std::vector<numerics::GradCheckReport> run_gradcheck_suite(const GradCheckOptions& opts = {});

}  // namespace casdet::verify
