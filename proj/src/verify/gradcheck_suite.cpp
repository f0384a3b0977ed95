#include "casdet/verify/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "casdet/losses.hpp"
#include "casdet/model.hpp"
#include "casdet/numerics/ops.hpp"
#include "casdet/pipeline/trainer.hpp"

namespace casdet::verify {

namespace {

using numerics::GradCheckReport;
using numerics::Shape;
using numerics::Tensor;
using numerics::Var;
using Rng = std::mt19937_64;

struct Instance {
  numerics::ScalarFn fn;  // already reduced to a scalar
  std::vector<Tensor> inputs;
};

using Generator = std::function<Instance(Rng&, bool fault)>;

struct Entry {
  std::string name;
  Generator make;
};

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t usize(Rng& rng, int lo, int hi) {
  return static_cast<std::size_t>(uniform_int(rng, lo, hi));
}

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// Values bounded away from zero, so relu stays off its kink under the probe.
Tensor off_zero_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    const double m = uniform(rng, 0.05, 1.0);
    v = uniform_int(rng, 0, 1) ? m : -m;
  }
  return t;
}

// Coordinates in [lo, hi] whose fractional part stays away from the cell
// edges, where bilinear interpolation has kinks.
double off_lattice(Rng& rng, double lo, double hi) {
  const double base = std::floor(uniform(rng, lo, hi));
  return base + uniform(rng, 0.05, 0.95);
}

// Scalar probe <w, out> with fixed random weights, optionally corrupting the
// gradient that leaves `out`.
Var project(const Var& out, const Tensor& weights, bool fault) {
  const Var v = fault ? numerics::scale_grad(out, 2.0) : out;
  const std::size_t n = v.value().numel();
  Var row = numerics::reshape(v, {1, n});
  return numerics::sum(numerics::matmul(row, Var::constant(weights)));
}

Instance probe_instance(Rng& rng, std::vector<Tensor> inputs, Shape out_shape,
                        std::function<Var(std::span<const Var>)> op, bool fault) {
  const std::size_t n = numerics::shape_numel(out_shape);
  Tensor w = random_tensor(rng, {n, 1});
  Instance inst;
  inst.inputs = std::move(inputs);
  inst.fn = [op = std::move(op), w = std::move(w), fault](std::span<const Var> in) {
    return project(op(in), w, fault);
  };
  return inst;
}

// Output shape is only known after running the op once.
Instance probe_instance(Rng& rng, std::vector<Tensor> inputs,
                        std::function<Var(std::span<const Var>)> op, bool fault) {
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(Var::constant(t));
  const Shape shape = op(leaves).shape();
  return probe_instance(rng, std::move(inputs), shape, std::move(op), fault);
}

Instance make_conv2d(Rng& rng, bool fault) {
  const std::size_t cin = usize(rng, 1, 3);
  const std::size_t cout = usize(rng, 1, 3);
  const std::size_t k = usize(rng, 1, 3);
  const int padding = uniform_int(rng, 0, 1);
  const int stride = uniform_int(rng, 1, 2);
  const std::size_t h = usize(rng, static_cast<int>(k) + 1, 6);
  const std::size_t w = usize(rng, static_cast<int>(k) + 1, 6);
  return probe_instance(
      rng, {random_tensor(rng, {cin, h, w}), random_tensor(rng, {cout, cin, k, k}),
            random_tensor(rng, {cout})},
      [stride, padding](std::span<const Var> in) {
        return numerics::conv2d(in[0], in[1], in[2], stride, padding);
      },
      fault);
}

Instance make_relu(Rng& rng, bool fault) {
  return probe_instance(rng, {off_zero_tensor(rng, {usize(rng, 1, 4), usize(rng, 1, 5)})},
                        [](std::span<const Var> in) { return numerics::relu(in[0]); }, fault);
}

Instance make_sigmoid(Rng& rng, bool fault) {
  return probe_instance(rng, {random_tensor(rng, {usize(rng, 1, 4), usize(rng, 1, 5)}, -4, 4)},
                        [](std::span<const Var> in) { return numerics::sigmoid(in[0]); }, fault);
}

Instance make_bilinear(Rng& rng, bool fault) {
  const std::size_t c = usize(rng, 1, 3);
  const std::size_t h = usize(rng, 2, 5);
  const std::size_t w = usize(rng, 2, 5);
  const std::size_t p = usize(rng, 1, 12);
  Tensor pts({p, 2});
  for (std::size_t i = 0; i < p; ++i) {
    pts[2 * i] = off_lattice(rng, -1.0, static_cast<double>(h));
    pts[2 * i + 1] = off_lattice(rng, -1.0, static_cast<double>(w));
  }
  return probe_instance(
      rng, {random_tensor(rng, {c, h, w}), std::move(pts)},
      [](std::span<const Var> in) { return numerics::bilinear_sample(in[0], in[1]); }, fault);
}

Instance make_matmul(Rng& rng, bool fault) {
  const std::size_t m = usize(rng, 1, 4);
  const std::size_t k = usize(rng, 1, 4);
  const std::size_t n = usize(rng, 1, 4);
  return probe_instance(rng, {random_tensor(rng, {m, k}), random_tensor(rng, {k, n})},
                        [](std::span<const Var> in) { return numerics::matmul(in[0], in[1]); },
                        fault);
}

Instance make_add_bias(Rng& rng, bool fault) {
  const std::size_t m = usize(rng, 1, 4);
  Shape shape{m, usize(rng, 1, 4)};
  if (uniform_int(rng, 0, 1)) shape.push_back(usize(rng, 1, 3));
  return probe_instance(rng, {random_tensor(rng, shape), random_tensor(rng, {m})},
                        [](std::span<const Var> in) { return numerics::add_bias(in[0], in[1]); },
                        fault);
}

Instance make_add(Rng& rng, bool fault) {
  const Shape shape{usize(rng, 1, 4), usize(rng, 1, 4)};
  return probe_instance(rng, {random_tensor(rng, shape), random_tensor(rng, shape)},
                        [](std::span<const Var> in) { return numerics::add(in[0], in[1]); },
                        fault);
}

Instance make_scale(Rng& rng, bool fault) {
  const double f = uniform(rng, -2.0, 2.0);
  return probe_instance(rng, {random_tensor(rng, {usize(rng, 1, 4), usize(rng, 1, 4)})},
                        [f](std::span<const Var> in) { return numerics::scale(in[0], f); },
                        fault);
}

Instance make_reshape(Rng& rng, bool fault) {
  const std::size_t a = usize(rng, 1, 4);
  const std::size_t b = usize(rng, 1, 4);
  const std::size_t c = usize(rng, 1, 3);
  return probe_instance(
      rng, {random_tensor(rng, {a, b, c})},
      [a, b, c](std::span<const Var> in) { return numerics::reshape(in[0], {b, a * c}); }, fault);
}

Instance make_permute(Rng& rng, bool fault) {
  std::vector<std::size_t> perm{0, 1, 2};
  std::shuffle(perm.begin(), perm.end(), rng);
  return probe_instance(
      rng, {random_tensor(rng, {usize(rng, 1, 4), usize(rng, 1, 4), usize(rng, 1, 4)})},
      [perm](std::span<const Var> in) { return numerics::permute(in[0], perm); }, fault);
}

Instance make_concat_rows(Rng& rng, bool fault) {
  const std::size_t cols = usize(rng, 1, 4);
  const int parts = uniform_int(rng, 1, 3);
  std::vector<Tensor> inputs;
  for (int i = 0; i < parts; ++i) inputs.push_back(random_tensor(rng, {usize(rng, 1, 3), cols}));
  return probe_instance(rng, std::move(inputs),
                        [](std::span<const Var> in) { return numerics::concat_rows(in); }, fault);
}

Instance make_sum(Rng& rng, bool fault) {
  return probe_instance(rng, {random_tensor(rng, {usize(rng, 1, 4), usize(rng, 1, 4)})},
                        [](std::span<const Var> in) { return numerics::sum(in[0]); }, fault);
}

Instance make_weighted_sum(Rng& rng, bool fault) {
  const int n = uniform_int(rng, 1, 4);
  std::vector<Tensor> inputs;
  std::vector<double> weights;
  for (int i = 0; i < n; ++i) {
    inputs.push_back(random_tensor(rng, {1}));
    weights.push_back(uniform(rng, 0.0, 2.0));
  }
  return probe_instance(
      rng, std::move(inputs),
      [weights](std::span<const Var> in) { return numerics::weighted_sum(in, weights); }, fault);
}

model::FCMParams fcm_from(std::span<const Var> in) {
  model::FCMParams p;
  p.offset_conv.weight.var = in[1];
  p.offset_conv.bias.var = in[2];
  p.deform.weight.var = in[3];
  p.deform.bias.var = in[4];
  return p;
}

Instance make_fcm(Rng& rng, bool fault) {
  const std::size_t c = usize(rng, 1, 3);
  const std::size_t h = usize(rng, 2, 4);
  const std::size_t w = usize(rng, 2, 4);
  // Nonzero offsets, so gradients flow through the sampling coordinates.
  return probe_instance(
      rng,
      {random_tensor(rng, {c, h, w}), random_tensor(rng, {model::kOffsetChannels, c, 1, 1}),
       random_tensor(rng, {model::kOffsetChannels}, -0.7, 0.7),
       random_tensor(rng, {c, c, 3, 3}), random_tensor(rng, {c})},
      [](std::span<const Var> in) { return model::fcm_forward(in[0], fcm_from(in)); }, fault);
}

std::vector<int> random_labels(Rng& rng, std::size_t n, int classes) {
  std::vector<int> labels(n);
  for (int& l : labels) l = uniform_int(rng, assignment::kIgnore, classes - 1);
  return labels;
}

Instance make_focal(Rng& rng, bool fault) {
  const std::size_t n = usize(rng, 1, 8);
  const int k = uniform_int(rng, 1, 3);
  const double alpha = uniform(rng, 0.1, 0.9);
  const double gamma = uniform_int(rng, 0, 1) ? 2.0 : uniform(rng, 0.0, 3.0);
  auto labels = random_labels(rng, n, k);
  return probe_instance(rng, {random_tensor(rng, {n, static_cast<std::size_t>(k)}, -3, 3)},
                        [labels, alpha, gamma](std::span<const Var> in) {
                          return losses::focal_loss(in[0], labels, alpha, gamma);
                        },
                        fault);
}

Instance make_smooth_l1(Rng& rng, bool fault) {
  const std::size_t n = usize(rng, 1, 6);
  const double beta = uniform_int(rng, 0, 1) ? 1.0 / 9.0 : uniform(rng, 0.2, 1.0);
  std::vector<std::optional<geometry::Deltas>> targets(n);
  for (auto& t : targets) {
    if (uniform_int(rng, 0, 3) == 0) continue;
    t = geometry::Deltas{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1),
                         uniform(rng, -1, 1)};
  }
  return probe_instance(rng, {random_tensor(rng, {n, 4})},
                        [targets, beta](std::span<const Var> in) {
                          return losses::smooth_l1(in[0], targets, beta);
                        },
                        fault);
}

// A tiny two-stage cascade with FCM on an 8x8 image. Output convs get large
// random weights so every loss term is active; assignments are taken at the
// unperturbed point and frozen, since boxes are constants of the loss.
//
// Single weights of this model can have gradients near 1e-8, below what
// central differences resolve against the loss's rounding noise. The check
// therefore runs along kCascadeDirections random directions per
// parameter tensor: the inputs are the direction coefficients t, and each
// tensor is theta_0 + V t with V uniform in [-1, 1].
constexpr std::size_t kCascadeDirections = 3;

Instance make_cascade_loss(Rng& rng, bool fault) {
  pipeline::TrainConfig cfg = pipeline::default_config();
  cfg.scene.image_size = 8;
  cfg.scene.num_classes = 2;
  cfg.model.num_classes = 2;
  cfg.model.channels = 2;
  cfg.model.head_depth = 1;
  cfg.model.num_stages = 2;
  cfg.model.use_fcm = true;
  cfg.model.level_strides = {2, 4};
  cfg.anchors.level_strides = {2, 4};
  cfg.anchors.scales = {3.0};
  cfg.anchors.aspect_ratios = {1.0};
  cfg.model.anchors_per_location = 1;
  cfg.stages = {pipeline::default_stage(0), pipeline::default_stage(1)};
  cfg.stages[1].alpha = uniform(rng, 0.5, 1.5);

  const model::CascadeParams params = model::init_params(cfg.model, rng());
  std::vector<Tensor> base;
  std::vector<Tensor> directions;  // [numel, K] per tensor
  for (const auto& p : params.parameters()) {
    // Positive biases keep most relus active, so no tensor is nearly dead.
    const bool bias = p.var.shape().size() == 1;
    base.push_back(random_tensor(rng, p.var.shape(), bias ? 0.0 : -0.6, 0.6));
    directions.push_back(random_tensor(rng, {p.var.value().numel(), kCascadeDirections}));
  }
  pipeline::SyntheticScene scene;
  scene.image = random_tensor(rng, {3, 8, 8}, 0.0, 1.0);
  const int objects = uniform_int(rng, 1, 3);
  for (int i = 0; i < objects; ++i) {
    const double w = uniform(rng, 2.5, 6.0);
    const double h = uniform(rng, 2.5, 6.0);
    const double x = uniform(rng, 0.0, 8.0 - w);
    const double y = uniform(rng, 0.0, 8.0 - h);
    scene.gts.push_back({{x, y, x + w, y + h}, uniform_int(rng, 0, 1)});
  }
  const auto anchors = geometry::generate_anchors(cfg.image_size(), cfg.anchors);

  auto build = [base, directions, params](std::span<const Var> coeffs) {
    std::vector<Var> vars;
    for (std::size_t j = 0; j < base.size(); ++j) {
      const Var moved = numerics::matmul(Var::constant(directions[j]), coeffs[j]);
      vars.push_back(numerics::add(Var::constant(base[j]),
                                   numerics::reshape(moved, base[j].shape())));
    }
    return params.rebind(vars);
  };
  std::vector<Var> zero;
  for (std::size_t j = 0; j < base.size(); ++j) {
    zero.push_back(Var::constant(Tensor({kCascadeDirections, 1})));
  }
  const auto frozen = pipeline::image_loss(scene, build(zero), anchors, cfg).assignments;

  Instance inst;
  inst.inputs.assign(base.size(), Tensor({kCascadeDirections, 1}));
  const double w = uniform(rng, 0.5, 1.5);
  inst.fn = [=](std::span<const Var> in) {
    const Var loss = pipeline::image_loss(scene, build(in), anchors, cfg, frozen).loss.total;
    return project(loss, Tensor({1, 1}, w), fault);
  };
  return inst;
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries{
      {"conv2d", make_conv2d},
      {"relu", make_relu},
      {"sigmoid", make_sigmoid},
      {"bilinear_sample", make_bilinear},
      {"matmul", make_matmul},
      {"add_bias", make_add_bias},
      {"add", make_add},
      {"scale", make_scale},
      {"reshape", make_reshape},
      {"permute", make_permute},
      {"concat_rows", make_concat_rows},
      {"sum", make_sum},
      {"weighted_sum", make_weighted_sum},
      {"fcm_forward", make_fcm},
      {"focal_loss", make_focal},
      {"smooth_l1", make_smooth_l1},
      {"cascade_loss", make_cascade_loss},
  };
  return entries;
}

}  // namespace

std::vector<std::string> gradcheck_op_names() {
  std::vector<std::string> names;
  for (const auto& e : registry()) names.push_back(e.name);
  return names;
}

std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckOptions& opts) {
  std::vector<GradCheckReport> out;
  std::uint64_t op_index = 0;
  for (const auto& e : registry()) {
    Rng rng(opts.seed * 1000003ULL + op_index++);
    std::vector<GradCheckReport> reports;
    for (int i = 0; i < opts.instances; ++i) {
      Instance inst = e.make(rng, opts.inject_fault);
      reports.push_back(
          numerics::finite_diff_check(e.name, inst.fn, inst.inputs, opts.tolerance));
    }
    out.push_back(numerics::merge_reports(reports));
  }
  return out;
}

}  // namespace casdet::verify
