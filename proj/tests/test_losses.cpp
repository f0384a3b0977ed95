#include <doctest.h>

#include <cmath>

#include "casdet/error.hpp"
#include "casdet/losses.hpp"
#include "casdet/numerics/gradcheck.hpp"
#include "casdet/numerics/ops.hpp"
#include "test_util.hpp"

using namespace casdet;
using namespace casdet::losses;
using numerics::Shape;
using numerics::Tensor;
using assignment::kBackground;
using assignment::kIgnore;

namespace {

Var logits_of(Shape shape, std::vector<double> v) {
  return Var::constant(Tensor(std::move(shape), std::move(v)));
}

double value(const Var& v) { return v.value()[0]; }

using Targets = std::vector<std::optional<geometry::Deltas>>;

assignment::AssignmentResult make_assignment(std::vector<int> labels, Targets targets) {
  assignment::AssignmentResult r;
  r.labels = std::move(labels);
  r.reg_targets = std::move(targets);
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    r.matched_gt.push_back(r.labels[i] >= 0 ? std::optional<int>(0) : std::nullopt);
  }
  return r;
}

}  // namespace

TEST_CASE("focal_loss examples") {
  const std::vector<int> fg{0};
  CHECK(value(focal_loss(logits_of({1, 1}, {0.0}), fg, 0.25, 2.0)) ==
        doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
  CHECK(value(focal_loss(logits_of({1, 1}, {0.0}), fg, 0.25, 2.0)) == doctest::Approx(0.04332).epsilon(1e-4));
  CHECK(value(focal_loss(logits_of({1, 1}, {40.0}), fg, 0.25, 2.0)) < 1e-15);
  CHECK(value(focal_loss(logits_of({1, 1}, {-40.0}), std::vector<int>{kBackground}, 0.25, 2.0)) < 1e-15);
  // Ignored rows contribute nothing.
  CHECK(value(focal_loss(logits_of({2, 1}, {0.0, 5.0}), std::vector<int>{0, kIgnore}, 0.25, 2.0)) ==
        doctest::Approx(0.25 * 0.25 * std::log(2.0)));
  CHECK_THROWS_AS(focal_loss(logits_of({1, 2}, {0.0, 0.0}), std::vector<int>{2}, 0.25, 2.0), Error);
}

TEST_CASE("focal_loss with gamma 0 and alpha 0.5 is half the BCE") {
  std::mt19937_64 rng(1);
  const Tensor x = casdet::testing::random_tensor(rng, {5, 3}, -3.0, 3.0);
  const std::vector<int> labels{0, 2, kBackground, 1, kBackground};
  double bce = 0.0;
  for (int n = 0; n < 5; ++n) {
    for (int c = 0; c < 3; ++c) {
      const double p = 1.0 / (1.0 + std::exp(-x[n * 3 + c]));
      bce += labels[n] == c ? -std::log(p) : -std::log(1.0 - p);
    }
  }
  CHECK(value(focal_loss(Var::constant(x), labels, 0.5, 0.0)) == doctest::Approx(0.5 * bce / 3.0).epsilon(1e-12));
}

TEST_CASE("focal_loss is non-negative and decreases with the correct logit") {
  double prev = 1e300;
  for (double z = -6.0; z <= 6.0; z += 0.25) {
    const double l = value(focal_loss(logits_of({1, 2}, {z, 0.3}), std::vector<int>{0}, 0.25, 2.0));
    CHECK(l >= 0.0);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("smooth_l1 examples") {
  const Targets zero{geometry::Deltas{0, 0, 0, 0}};
  CHECK(value(smooth_l1(logits_of({1, 4}, {0, 0, 0, 0}), zero, 1.0)) == 0.0);
  CHECK(value(smooth_l1(logits_of({1, 4}, {1, 0, 0, 0}), zero, 1.0)) == 0.5);
  CHECK(value(smooth_l1(logits_of({1, 4}, {3, 0, 0, 0}), zero, 1.0)) == 2.5);
  CHECK(value(smooth_l1(logits_of({1, 4}, {0, -3, 0, 0}), zero, 1.0)) == 2.5);
  // Rows without a target are skipped and do not count in the normaliser.
  const Targets mixed{geometry::Deltas{0, 0, 0, 0}, std::nullopt};
  CHECK(value(smooth_l1(logits_of({2, 4}, {3, 0, 0, 0, 9, 9, 9, 9}), mixed, 1.0)) == 2.5);
  CHECK(value(smooth_l1(logits_of({1, 4}, {9, 9, 9, 9}), Targets{std::nullopt}, 1.0)) == 0.0);
}

TEST_CASE("smooth_l1 is continuous and C1 at beta") {
  const double beta = 1.0 / 9.0;
  const Targets zero{geometry::Deltas{0, 0, 0, 0}};
  auto f = [&](double x) { return value(smooth_l1(logits_of({1, 4}, {x, 0, 0, 0}), zero, beta)); };
  const double e = 1e-7;
  CHECK(std::abs(f(beta + e) - f(beta - e)) < 3e-7);
  const double left = (f(beta) - f(beta - e)) / e;
  const double right = (f(beta + e) - f(beta)) / e;
  CHECK(left == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(right == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("duplicating every box leaves both losses unchanged") {
  std::mt19937_64 rng(2);
  const Tensor x = casdet::testing::random_tensor(rng, {4, 3}, -2.0, 2.0);
  const Tensor r = casdet::testing::random_tensor(rng, {4, 4}, -1.0, 1.0);
  const std::vector<int> labels{1, kBackground, kIgnore, 0};
  const Targets t{geometry::Deltas{0.1, -0.2, 0.3, 0.0}, std::nullopt, std::nullopt,
                  geometry::Deltas{-0.5, 0.5, 0.05, 0.2}};
  std::vector<double> x2, r2;
  for (int rep = 0; rep < 2; ++rep) {
    x2.insert(x2.end(), x.data().begin(), x.data().end());
    r2.insert(r2.end(), r.data().begin(), r.data().end());
  }
  std::vector<int> labels2 = labels;
  labels2.insert(labels2.end(), labels.begin(), labels.end());
  Targets t2 = t;
  t2.insert(t2.end(), t.begin(), t.end());
  const double f1 = value(focal_loss(Var::constant(x), labels, 0.25, 2.0));
  const double f2 = value(focal_loss(logits_of({8, 3}, x2), labels2, 0.25, 2.0));
  CHECK(f2 == doctest::Approx(f1).epsilon(1e-12));
  const double s1 = value(smooth_l1(Var::constant(r), t, 1.0 / 9.0));
  const double s2 = value(smooth_l1(logits_of({8, 4}, r2), t2, 1.0 / 9.0));
  CHECK(s2 == doctest::Approx(s1).epsilon(1e-12));
}

TEST_CASE("stage_loss combines with lambda and scales targets") {
  const Var cls = logits_of({2, 1}, {0.0, -1.0});
  const Var reg = logits_of({2, 4}, {3, 0, 0, 0, 5, 5, 5, 5});
  const auto a = make_assignment({0, kBackground}, {geometry::Deltas{0, 0, 0, 0}, std::nullopt});
  assignment::StageConfig cfg;
  cfg.lambda = 2.0;
  LossSettings s;
  s.smooth_l1_beta = 1.0;
  const StageLoss l = stage_loss(cls, reg, a, cfg, s);
  const double focal = value(focal_loss(cls, a.labels, s.focal_alpha, s.focal_gamma));
  CHECK(value(l.cls) == doctest::Approx(focal));
  CHECK(value(l.loc) == 2.5);
  CHECK(value(l.combined) == doctest::Approx(focal + 5.0));
  cfg.lambda = 0.0;
  CHECK(value(stage_loss(cls, reg, a, cfg, s).combined) == doctest::Approx(focal));
  // No foreground: loc is 0 and combined == cls.
  cfg.lambda = 2.0;
  const auto bg = make_assignment({kBackground, kBackground}, {std::nullopt, std::nullopt});
  const StageLoss e = stage_loss(cls, reg, bg, cfg, s);
  CHECK(value(e.loc) == 0.0);
  CHECK(value(e.combined) == value(e.cls));
  // Target 0.3 with std 0.1 becomes 3: prediction 0 is 2.5 away from the knot.
  const auto scaled = make_assignment({0, kBackground}, {geometry::Deltas{0.3, 0, 0, 0}, std::nullopt});
  const Var zero_reg = logits_of({2, 4}, {0, 0, 0, 0, 0, 0, 0, 0});
  CHECK(value(stage_loss(cls, zero_reg, scaled, cfg, s, {0.1, 1, 1, 1}).loc) == doctest::Approx(2.5));
}

TEST_CASE("total_loss examples") {
  auto stage_of = [](double v) {
    const Var c = Var::constant(Tensor({1}, std::vector<double>{v}));
    return StageLoss{c, Var::constant(Tensor({1}, std::vector<double>{0.0})), c};
  };
  const std::vector<StageLoss> two{stage_of(3.0), stage_of(5.0)};
  std::vector<assignment::StageConfig> cfgs(2);
  CHECK(value(total_loss(two, cfgs).total) == 8.0);
  CHECK(total_loss(two, cfgs).breakdown.total == 8.0);
  cfgs[1].alpha = 0.0;
  CHECK(value(total_loss(two, cfgs).total) == 3.0);
  const std::vector<StageLoss> one{stage_of(3.0)};
  CHECK(value(total_loss(one, std::vector<assignment::StageConfig>(1)).total) == 3.0);
  CHECK_THROWS_AS(total_loss(two, std::vector<assignment::StageConfig>(1)), Error);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(3);
  const std::vector<int> labels{1, kBackground, 0, kIgnore};
  const Targets t{geometry::Deltas{0.1, -0.2, 0.3, 0.0}, std::nullopt, geometry::Deltas{-0.5, 0.5, 0.9, 0.2},
                  std::nullopt};
  for (int i = 0; i < 10; ++i) {
    const Tensor x = casdet::testing::random_tensor(rng, {4, 2}, -2.0, 2.0);
    const Tensor r = casdet::testing::random_tensor(rng, {4, 4}, -1.5, 1.5);
    const auto fr = numerics::finite_diff_check(
        "focal_loss", [&](std::span<const Var> in) { return focal_loss(in[0], labels, 0.25, 2.0); }, {x},
        1e-4);
    CHECK(fr.max_rel_error < 1e-4);
    const auto sr = numerics::finite_diff_check(
        "smooth_l1", [&](std::span<const Var> in) { return smooth_l1(in[0], t, 0.5); }, {r}, 1e-4);
    CHECK(sr.max_rel_error < 1e-4);
  }
}
