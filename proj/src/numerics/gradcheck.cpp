#include "casdet/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "casdet/error.hpp"

namespace casdet::numerics {

namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(Var::constant(t));
  Var out = fn(leaves);
  return out.value().item();
}

}  // namespace

GradCheckReport finite_diff_check(const std::string& op_name,
                                  const ScalarFn& fn,
                                  const std::vector<Tensor>& inputs,
                                  double tolerance, double eps) {
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    Tensor copy(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
    leaves.push_back(Var::leaf(std::move(copy), true));
  }
  Var out = fn(leaves);
  if (out.value().numel() != 1) {
    throw DimensionError("finite_diff_check: '" + op_name +
                         "' must produce a single-element output, got shape " +
                         shape_to_string(out.shape()));
  }
  backward(out);

  GradCheckReport report{op_name, 0.0, tolerance, false};
  std::vector<Tensor> probe = inputs;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Tensor& leaf = leaves[t].value();
    for (std::size_t i = 0; i < probe[t].numel(); ++i) {
      const double analytic = leaf.has_grad() ? leaf.grad()[i] : 0.0;
      const double orig = probe[t][i];
      probe[t][i] = orig + eps;
      const double up = evaluate(fn, probe);
      probe[t][i] = orig - eps;
      const double down = evaluate(fn, probe);
      probe[t][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic - numeric) / denom;
      if (!std::isfinite(err)) {
        report.max_rel_error = std::numeric_limits<double>::infinity();
      } else {
        report.max_rel_error = std::max(report.max_rel_error, err);
      }
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

GradCheckReport merge_reports(std::span<const GradCheckReport> reports) {
  if (reports.empty()) throw Error("merge_reports: no reports");
  GradCheckReport out = reports.front();
  for (const auto& r : reports) {
    out.max_rel_error = std::max(out.max_rel_error, r.max_rel_error);
  }
  out.passed = out.max_rel_error <= out.tolerance;
  return out;
}

}  // namespace casdet::numerics
