#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <set>

#include "casdet/verify/gradcheck_suite.hpp"

using namespace casdet;

TEST_CASE("registry lists every differentiable op exactly once") {
  const auto names = verify::gradcheck_op_names();
  const std::set<std::string> unique(names.begin(), names.end());
  CHECK(unique.size() == names.size());
  for (const char* required :
       {"conv2d", "sigmoid", "relu", "bilinear_sample", "fcm_forward", "focal_loss", "smooth_l1",
        "cascade_loss", "matmul", "add_bias", "add", "scale", "reshape", "permute", "concat_rows",
        "sum", "weighted_sum"}) {
    CHECK_MESSAGE(unique.count(required) == 1, required);
  }
  CHECK(unique.count("scale_grad") == 0);
}

TEST_CASE("full suite passes at 1e-4 with 20 instances per op") {
  const auto start = std::chrono::steady_clock::now();
  const auto reports = verify::run_gradcheck_suite({});
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  REQUIRE(reports.size() == verify::gradcheck_op_names().size());
  for (const auto& r : reports) {
    CHECK_MESSAGE(r.passed, r.op_name << " max_rel_error " << r.max_rel_error);
    CHECK(r.tolerance == 1e-4);
  }
  CHECK(secs < 120.0);
}

TEST_CASE("other seeds pass too") {
  for (std::uint64_t seed : {101u, 202u}) {
    verify::GradCheckOptions o;
    o.seed = seed;
    for (const auto& r : verify::run_gradcheck_suite(o)) {
      CHECK_MESSAGE(r.passed, r.op_name << " seed " << seed << " error " << r.max_rel_error);
    }
  }
}

TEST_CASE("injected fault fails every op") {
  verify::GradCheckOptions o;
  o.instances = 3;
  o.inject_fault = true;
  for (const auto& r : verify::run_gradcheck_suite(o)) {
    CHECK_MESSAGE(!r.passed, r.op_name);
  }
}
