#include <doctest.h>

#include <cmath>
#include <sstream>

#include "casdet/error.hpp"
#include "casdet/numerics/checkpoint.hpp"
#include "casdet/numerics/gradcheck.hpp"
#include "casdet/numerics/ops.hpp"
#include "casdet/numerics/optim.hpp"
#include "test_util.hpp"

using namespace casdet;
using namespace casdet::numerics;
using casdet::testing::random_tensor;

TEST_CASE("tensor invariants") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(shape_numel(t.shape()) == 24);
  CHECK_FALSE(t.has_grad());
  CHECK(t.grad().size() == t.numel());
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.reshape({5, 5}), DimensionError);
  t.reshape({4, 6});
  CHECK(t.shape() == Shape{4, 6});
}

TEST_CASE("conv2d examples") {
  std::mt19937_64 rng(1);
  SUBCASE("1x1 kernel of value 1 is the identity") {
    const Tensor x = random_tensor(rng, {1, 4, 5});
    const Var y = conv2d(Var::constant(x), Var::constant(Tensor({1, 1, 1, 1}, 1.0)), 1, 0);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == x[i]);
  }
  SUBCASE("3x3 ones on 3x3 ones gives 9") {
    const Var y = conv2d(Var::constant(Tensor({1, 3, 3}, 1.0)),
                         Var::constant(Tensor({1, 1, 3, 3}, 1.0)), 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1});
    CHECK(y.value()[0] == 9.0);
  }
  SUBCASE("output size formula and same padding") {
    const Var x = Var::constant(random_tensor(rng, {2, 7, 6}));
    CHECK(conv2d(x, Var::constant(Tensor({3, 2, 3, 3})), 2, 1).shape() == Shape{3, 4, 3});
    CHECK(conv2d(x, Var::constant(Tensor({3, 2, 3, 3})), 1, 1).shape() == Shape{3, 7, 6});
    CHECK(conv2d(x, Var::constant(Tensor({1, 2, 5, 5})), 1, 2).shape() == Shape{1, 7, 6});
  }
  SUBCASE("bias is added per output channel") {
    const Var y = conv2d(Var::constant(Tensor({1, 2, 2}, 1.0)), Var::constant(Tensor({2, 1, 1, 1}, 1.0)),
                         Var::constant(Tensor({2}, std::vector<double>{0.5, -1.0})), 1, 0);
    CHECK(y.value()[0] == 1.5);
    CHECK(y.value()[4] == 0.0);
  }
}

TEST_CASE("conv2d errors name the offending axis") {
  const Var x = Var::constant(Tensor({2, 3, 3}));
  auto message = [](auto&& fn) {
    try {
      fn();
    } catch (const DimensionError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message([&] { conv2d(x, Var::constant(Tensor({1, 3, 3, 3})), 1, 0); })
            .find("axis 1") != std::string::npos);
  CHECK(message([&] { conv2d(x, Var::constant(Tensor({1, 2, 5, 3})), 1, 0); })
            .find("axis 2") != std::string::npos);
  CHECK(message([&] { conv2d(x, Var::constant(Tensor({1, 2, 3, 5})), 1, 0); })
            .find("axis 3") != std::string::npos);
  CHECK_THROWS_AS(conv2d(x, Var::constant(Tensor({1, 2, 1, 1})), 0, 0), DimensionError);
}

TEST_CASE("bilinear_sample examples") {
  const Tensor grid({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  auto sample = [&](double y, double x) {
    return bilinear_sample(Var::constant(grid), Var::constant(Tensor({1, 2}, std::vector<double>{y, x})))
        .value()[0];
  };
  CHECK(sample(0.5, 0.5) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(sample(1, 1) == 4.0);
  CHECK(sample(0, 1) == 2.0);
  CHECK(sample(-5, -5) == 0.0);
  CHECK(sample(1.5, 1.0) == doctest::Approx(2.0));  // half of the border value
  std::mt19937_64 rng(2);
  const Tensor big = random_tensor(rng, {2, 4, 4});
  const Var out = bilinear_sample(Var::constant(big), Var::constant(Tensor({1, 2}, std::vector<double>{1, 2})));
  CHECK(out.value()[0] == big[1 * 4 + 2]);
  CHECK(out.value()[1] == big[16 + 1 * 4 + 2]);
}

TEST_CASE("bilinear_sample is linear in the input values") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor(rng, {2, 5, 4});
    const Tensor b = random_tensor(rng, {2, 5, 4});
    const Tensor pts = random_tensor(rng, {7, 2}, -1.5, 5.5);
    const double s = 1.7;
    const double t = -0.4;
    Tensor mix({2, 5, 4});
    for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = s * a[i] + t * b[i];
    const auto p = Var::constant(pts);
    const Tensor ya = bilinear_sample(Var::constant(a), p).value();
    const Tensor yb = bilinear_sample(Var::constant(b), p).value();
    const Tensor ym = bilinear_sample(Var::constant(mix), p).value();
    for (std::size_t i = 0; i < ym.numel(); ++i) {
      CHECK(ym[i] == doctest::Approx(s * ya[i] + t * yb[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("bilinear_sample is Lipschitz in the coordinates") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2.0, 6.0);
  std::uniform_real_distribution<double> step(-0.3, 0.3);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor x = random_tensor(rng, {1, 5, 5});
    double max_abs = 0.0;
    for (double v : x.data()) max_abs = std::max(max_abs, std::abs(v));
    const double y0 = u(rng), x0 = u(rng), dy = step(rng), dx = step(rng);
    const auto v0 = bilinear_sample(Var::constant(x), Var::constant(Tensor({1, 2}, std::vector<double>{y0, x0})));
    const auto v1 = bilinear_sample(Var::constant(x),
                                    Var::constant(Tensor({1, 2}, std::vector<double>{y0 + dy, x0 + dx})));
    const double dist = std::sqrt(dy * dy + dx * dx);
    CHECK(std::abs(v1.value()[0] - v0.value()[0]) <= 2.0 * max_abs * dist + 1e-12);
  }
}

TEST_CASE("relu and sigmoid") {
  const Var x = Var::leaf(Tensor({3}, std::vector<double>{-1.0, 0.0, 2.0}), true);
  const Var r = relu(x);
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 0.0);
  CHECK(r.value()[2] == 2.0);
  backward(sum(r));
  CHECK(x.value().grad()[0] == 0.0);
  CHECK(x.value().grad()[1] == 0.0);  // subgradient at 0 is 0
  CHECK(x.value().grad()[2] == 1.0);
  CHECK(sigmoid(Var::constant(Tensor::scalar(0.0))).value()[0] == 0.5);
  std::mt19937_64 rng(5);
  const auto rep = finite_diff_check(
      "sigmoid", [](std::span<const Var> in) { return sum(sigmoid(in[0])); },
      {random_tensor(rng, {4, 3}, -3, 3)}, 1e-6);
  CHECK(rep.passed);
}

TEST_CASE("gradients accumulate additively") {
  const Var x = Var::leaf(Tensor({2}, std::vector<double>{1.0, 2.0}), true);
  backward(sum(add(x, scale(x, 3.0))));
  CHECK(x.value().grad()[0] == 4.0);
  CHECK(x.value().grad()[1] == 4.0);
  backward(sum(x));  // leaves keep accumulating until zeroed
  CHECK(x.value().grad()[0] == 5.0);
}

TEST_CASE("sgd_step examples") {
  SUBCASE("lr = 0 leaves parameters unchanged") {
    Parameter p = make_parameter("w", Tensor({2}, std::vector<double>{1.5, -2.0}));
    p.var.value().grad()[0] = 3.0;
    p.var.value().grad()[1] = -1.0;
    std::vector<std::vector<double>> v;
    sgd_step({&p, 1}, 0.0, 0.9, v);
    CHECK(p.var.value()[0] == 1.5);
    CHECK(p.var.value()[1] == -2.0);
  }
  SUBCASE("w=1, grad=2, lr=0.1, momentum=0 gives 0.8 and zeroes the grad") {
    Parameter p = make_parameter("w", Tensor::scalar(1.0));
    p.var.value().grad()[0] = 2.0;
    std::vector<std::vector<double>> v;
    sgd_step({&p, 1}, 0.1, 0.0, v);
    CHECK(p.var.value()[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(p.var.value().grad()[0] == 0.0);
  }
  SUBCASE("momentum 0.9, constant grad 1: -0.1 then -0.29") {
    Parameter p = make_parameter("w", Tensor::scalar(0.0));
    std::vector<std::vector<double>> v;
    p.var.value().grad()[0] = 1.0;
    sgd_step({&p, 1}, 0.1, 0.9, v);
    CHECK(p.var.value()[0] == doctest::Approx(-0.1).epsilon(1e-15));
    p.var.value().grad()[0] = 1.0;
    sgd_step({&p, 1}, 0.1, 0.9, v);
    CHECK(p.var.value()[0] == doctest::Approx(-0.29).epsilon(1e-15));
  }
  SUBCASE("missing grad names the parameter") {
    Parameter p = make_parameter("stage2.head.cls_out.bias", Tensor::scalar(0.0));
    std::vector<std::vector<double>> v;
    try {
      sgd_step({&p, 1}, 0.1, 0.0, v);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("stage2.head.cls_out.bias") != std::string::npos);
    }
    Sgd opt(0.1, 0.9);
    CHECK_THROWS_AS(opt.step({&p, 1}), Error);
  }
  SUBCASE("Sgd applies weight decay") {
    Parameter p = make_parameter("w", Tensor::scalar(2.0));
    p.var.value().grad()[0] = 0.0;
    Sgd opt(0.5, 0.0, 0.1);
    opt.step({&p, 1});
    CHECK(p.var.value()[0] == doctest::Approx(1.9).epsilon(1e-15));
  }
}

TEST_CASE("finite_diff_check examples") {
  std::mt19937_64 rng(6);
  SUBCASE("linear function is exact") {
    const Tensor w = random_tensor(rng, {5, 1});
    const auto rep = finite_diff_check(
        "linear",
        [&](std::span<const Var> in) {
          return sum(matmul(reshape(in[0], {1, 5}), Var::constant(w)));
        },
        {random_tensor(rng, {5})}, 1e-4);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error <= 1e-9);
  }
  SUBCASE("conv2d + sigmoid + sum passes at 1e-4") {
    const auto rep = finite_diff_check(
        "conv_sigmoid",
        [](std::span<const Var> in) { return sum(sigmoid(conv2d(in[0], in[1], in[2], 1, 1))); },
        {random_tensor(rng, {2, 5, 5}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})},
        1e-4);
    CHECK(rep.passed);
    CHECK(rep.op_name == "conv_sigmoid");
    CHECK(rep.tolerance == 1e-4);
  }
  SUBCASE("conv2d backward within 1e-5 on random instances") {
    for (int i = 0; i < 10; ++i) {
      const auto rep = finite_diff_check(
          "conv2d",
          [](std::span<const Var> in) { return sum(sigmoid(conv2d(in[0], in[1], 2, 1))); },
          {random_tensor(rng, {2, 6, 5}), random_tensor(rng, {2, 2, 3, 3})}, 1e-5);
      CHECK(rep.passed);
    }
  }
  SUBCASE("corrupted backward (grad x2) fails") {
    const auto rep = finite_diff_check(
        "corrupted", [](std::span<const Var> in) { return sum(scale_grad(sigmoid(in[0]), 2.0)); },
        {random_tensor(rng, {3, 3})}, 1e-4);
    CHECK_FALSE(rep.passed);
    CHECK(rep.max_rel_error == doctest::Approx(0.5));
  }
  SUBCASE("non-scalar output is an error") {
    CHECK_THROWS_AS(
        finite_diff_check("vector", [](std::span<const Var> in) { return relu(in[0]); },
                          {random_tensor(rng, {3})}, 1e-4),
        DimensionError);
  }
  SUBCASE("passed iff max_rel_error <= tolerance") {
    GradCheckReport a{"x", 1e-5, 1e-4, true};
    GradCheckReport b{"x", 2e-4, 1e-4, false};
    const GradCheckReport both[] = {a, b};
    const auto m = merge_reports(both);
    CHECK(m.max_rel_error == 2e-4);
    CHECK_FALSE(m.passed);
  }
}

TEST_CASE("checkpoint round trip is exact") {
  std::mt19937_64 rng(7);
  std::vector<NamedTensor> tensors{{"a.weight", random_tensor(rng, {2, 3, 1, 1}, -1e3, 1e3)},
                                   {"a.bias", Tensor({3}, std::vector<double>{0.1, -0.0, 1e-300})},
                                   {"b", random_tensor(rng, {17})}};
  std::stringstream ss;
  write_checkpoint(ss, tensors);
  const std::string first = ss.str();
  const auto back = read_checkpoint(ss);
  REQUIRE(back.size() == tensors.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == tensors[i].name);
    CHECK(back[i].tensor.shape() == tensors[i].tensor.shape());
    for (std::size_t k = 0; k < back[i].tensor.numel(); ++k) {
      CHECK(back[i].tensor[k] == tensors[i].tensor[k]);
    }
  }
  std::stringstream again;
  write_checkpoint(again, back);
  CHECK(again.str() == first);
  CHECK(first.rfind("casdet-checkpoint 1\n", 0) == 0);
}

TEST_CASE("checkpoint loading errors are descriptive") {
  const auto dir = std::filesystem::temp_directory_path() / "casdet_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "x.ckpt";
  std::vector<Parameter> saved{make_parameter("w", Tensor({2, 2}, 1.0)),
                               make_parameter("b", Tensor({2}, 2.0))};
  save_checkpoint(path, saved);

  std::vector<Parameter> same{make_parameter("w", Tensor({2, 2})), make_parameter("b", Tensor({2}))};
  load_checkpoint(path, same);
  CHECK(same[0].var.value()[3] == 1.0);
  CHECK(same[1].var.value()[1] == 2.0);

  auto message = [&](std::vector<Parameter> params) {
    try {
      load_checkpoint(path, params);
    } catch (const CheckpointError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message({make_parameter("w", Tensor({2, 2})), make_parameter("b", Tensor({3}))})
            .find("'b'") != std::string::npos);
  CHECK(message({make_parameter("w", Tensor({2, 2}))}).find("'b'") != std::string::npos);
  CHECK(message({make_parameter("w", Tensor({2, 2})), make_parameter("b", Tensor({2})),
                 make_parameter("c", Tensor({1}))})
            .find("'c'") != std::string::npos);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt", same), CheckpointError);
  std::stringstream bad("casdet-checkpoint 9\n");
  CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);
  std::filesystem::remove_all(dir);
}
