#include "casdet/verify/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "casdet/evaluation.hpp"
#include "casdet/model.hpp"
#include "casdet/numerics/ops.hpp"
#include "casdet/pipeline/config.hpp"
#include "casdet/pipeline/inference.hpp"
#include "casdet/verify/oracles.hpp"

namespace casdet::verify {

namespace {

using geometry::Box;
using geometry::Detection;
using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Box random_box(Rng& rng, double extent = 64.0, double min_side = 1.0, double max_side = 30.0) {
  const double w = uniform(rng, min_side, max_side);
  const double h = uniform(rng, min_side, max_side);
  const double x = uniform(rng, 0.0, extent - w);
  const double y = uniform(rng, 0.0, extent - h);
  return {x, y, x + w, y + h};
}

// Box near `b`, so suppression and matching thresholds are exercised.
Box jitter(Rng& rng, const Box& b, double amount) {
  const double s = amount * std::max(b.width(), b.height());
  return {b.x1 + uniform(rng, -s, s), b.y1 + uniform(rng, -s, s), b.x2 + uniform(rng, -s, s),
          b.y2 + uniform(rng, -s, s)};
}

bool same(const Detection& a, const Detection& b) {
  return a.box == b.box && a.class_id == b.class_id && a.score == b.score;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

CheckResult pass(std::string name, std::string detail) {
  return {std::move(name), true, std::move(detail)};
}

CheckResult fail(std::string name, std::string detail) {
  return {std::move(name), false, std::move(detail)};
}

numerics::Tensor random_tensor(Rng& rng, numerics::Shape shape, double lo, double hi) {
  numerics::Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

}  // namespace

CheckResult check_nms_oracle(int sets, std::uint64_t seed) {
  const std::string name = "nms vs brute-force greedy";
  Rng rng(seed);
  const double thresholds[] = {0.3, 0.5, 0.7};
  for (int s = 0; s < sets; ++s) {
    const int n = uniform_int(rng, 0, 20);
    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
      Box b = (i > 0 && uniform_int(rng, 0, 1)) ? jitter(rng, dets[uniform_int(rng, 0, i - 1)].box, 0.2)
                                                : random_box(rng);
      // Coarse scores on some sets, so equal-score ties occur.
      const double score = s % 3 == 0 ? uniform_int(rng, 1, 5) / 5.0 : uniform(rng, 0.0, 1.0);
      dets.push_back({b, 0, score});
    }
    const double thr = thresholds[s % 3];
    const auto got = geometry::nms(dets, thr);
    const auto want = oracle_nms(dets, thr);
    bool ok = got.size() == want.size();
    for (std::size_t i = 0; ok && i < got.size(); ++i) ok = same(got[i], want[i]);
    if (!ok) {
      return fail(name, "set " + std::to_string(s) + ": kept " + std::to_string(got.size()) +
                            " boxes, oracle kept " + std::to_string(want.size()));
    }
  }
  return pass(name, std::to_string(sets) + " sets, exact match");
}

CheckResult check_assign_oracle(int scenes, std::uint64_t seed) {
  const std::string name = "assign vs independent max-IoU";
  Rng rng(seed);
  const auto grid = geometry::generate_anchors({32, 32}, {{8, 16}, {10.0, 14.0}, {0.5, 1.0, 2.0}});
  for (int s = 0; s < scenes; ++s) {
    const int ngt = uniform_int(rng, 0, 4);
    std::vector<assignment::GroundTruth> gts;
    for (int g = 0; g < ngt; ++g) {
      // Occasional exact duplicates exercise the lowest-index tie-break.
      if (g > 0 && uniform_int(rng, 0, 5) == 0) {
        gts.push_back({gts[g - 1].box, uniform_int(rng, 0, 2)});
      } else {
        gts.push_back({random_box(rng, 32.0, 3.0, 20.0), uniform_int(rng, 0, 2)});
      }
    }
    std::vector<Box> boxes;
    if (s % 2 == 0) {
      boxes = grid.boxes;
    } else {
      const int nb = uniform_int(rng, 1, 10);
      for (int b = 0; b < nb; ++b) {
        if (!gts.empty() && uniform_int(rng, 0, 2) == 0) {
          const Box& g = gts[uniform_int(rng, 0, ngt - 1)].box;
          boxes.push_back(uniform_int(rng, 0, 3) == 0 ? g : jitter(rng, g, 0.15));
        } else {
          boxes.push_back(random_box(rng, 32.0, 2.0, 20.0));
        }
      }
    }
    assignment::StageConfig cfg;
    cfg.t_fg = uniform(rng, 0.3, 0.8);
    cfg.t_bg = uniform(rng, 0.1, cfg.t_fg);
    const auto got = assignment::assign(boxes, gts, cfg);
    const auto want = oracle_assign(boxes, gts, cfg);
    if (got.labels != want.labels || got.matched_gt != want.matched_gt ||
        got.reg_targets != want.reg_targets) {
      return fail(name, "scene " + std::to_string(s) + " differs from the oracle");
    }
  }
  return pass(name, std::to_string(scenes) + " scenes, exact match");
}

CheckResult check_ap_oracle(int random_instances, std::uint64_t seed) {
  const std::string name = "ap_at_iou vs hand-verified and oracle values";
  struct Case {
    std::string label;
    std::vector<evaluation::ImageDetections> dets;
    std::vector<evaluation::ImageGroundTruth> gts;
    double thr;
    double expected;
  };
  const Box g{0, 0, 10, 10};
  const Box g2{20, 20, 30, 30};
  const Box far{40, 40, 50, 50};
  const Box iou08{0, 0, 10, 8};
  // IoU 0.65 with g: 10 x 6.5 inside it.
  const Box iou065{0, 0, 10, 6.5};
  std::vector<Case> cases{
      {"perfect", {{{g, 0, 1.0}}}, {{{g, 0}}}, 0.5, 1.0},
      {"no detections", {{}}, {{{g, 0}}}, 0.5, 0.0},
      {"worked PR example", {{{iou08, 0, 0.9}, {far, 0, 0.8}}}, {{{g, 0}}}, 0.5, 1.0},
      // PR points (0.5,1), (0.5,0.5), (1,2/3): 51 samples at 1, 50 at 2/3.
      {"TP FP TP",
       {{{g, 0, 0.9}, {far, 0, 0.8}, {g2, 0, 0.7}}},
       {{{g, 0}, {g2, 0}}},
       0.5,
       (51.0 + 50.0 * 2.0 / 3.0) / 101.0},
      // FP first: precision 1/2 at recall 1.
      {"FP then TP", {{{far, 0, 0.9}, {g, 0, 0.8}}}, {{{g, 0}}}, 0.5, 0.5},
      {"IoU 0.65 at 0.6", {{{iou065, 0, 0.9}}}, {{{g, 0}}}, 0.6, 1.0},
      {"IoU 0.65 at 0.7", {{{iou065, 0, 0.9}}}, {{{g, 0}}}, 0.7, 0.0},
      {"wrong class", {{{g, 1, 0.9}}}, {{{g, 0}}}, 0.5, 0.0},
      {"one of two classes", {{{g, 0, 0.9}}}, {{{g, 0}, {g2, 1}}}, 0.5, 0.5},
      // Duplicate of a matched detection is a false positive after it.
      {"duplicate", {{{g, 0, 0.9}, {g, 0, 0.8}}}, {{{g, 0}}}, 0.5, 1.0},
      // Recall reaches only 1/2: samples 0..50 at precision 1.
      {"half recall", {{{g, 0, 0.9}}}, {{{g, 0}, {g2, 0}}}, 0.5, 51.0 / 101.0},
      {"two images", {{{g, 0, 0.9}}, {{g2, 0, 0.8}}}, {{{g, 0}}, {{g2, 0}}}, 0.5, 1.0},
  };
  double worst = 0.0;
  for (const auto& c : cases) {
    const double got = evaluation::ap_at_iou(c.dets, c.gts, c.thr);
    const double err = std::abs(got - c.expected);
    worst = std::max(worst, err);
    if (err > 1e-9) {
      return fail(name, "case '" + c.label + "': got " + std::to_string(got) + ", expected " +
                            std::to_string(c.expected));
    }
  }
  Rng rng(seed);
  for (int i = 0; i < random_instances; ++i) {
    const int images = uniform_int(rng, 1, 3);
    std::vector<evaluation::ImageDetections> dets(images);
    std::vector<evaluation::ImageGroundTruth> gts(images);
    for (int img = 0; img < images; ++img) {
      const int ngt = uniform_int(rng, 0, 3);
      for (int k = 0; k < ngt; ++k) gts[img].push_back({random_box(rng), uniform_int(rng, 0, 1)});
      const int nd = uniform_int(rng, 0, 5);
      for (int k = 0; k < nd; ++k) {
        const Box b = ngt > 0 && uniform_int(rng, 0, 2) > 0
                          ? jitter(rng, gts[img][uniform_int(rng, 0, ngt - 1)].box, 0.15)
                          : random_box(rng);
        const double score = i % 2 == 0 ? uniform_int(rng, 1, 4) / 4.0 : uniform(rng, 0, 1);
        dets[img].push_back({b, uniform_int(rng, 0, 1), score});
      }
    }
    for (double thr : {0.5, 0.75}) {
      const double err =
          std::abs(evaluation::ap_at_iou(dets, gts, thr) - oracle_ap(dets, gts, thr));
      worst = std::max(worst, err);
      if (err > 1e-9) {
        return fail(name, "random instance " + std::to_string(i) + " differs by " + fmt(err));
      }
    }
  }
  return pass(name, std::to_string(cases.size()) + " hand cases, " +
                        std::to_string(random_instances) + " random instances, max err " +
                        fmt(worst));
}

CheckResult check_box_roundtrip(int pairs, std::uint64_t seed) {
  const std::string name = "encode/decode round trip";
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < pairs; ++i) {
    const Box a = random_box(rng, 200.0, 1.0, 50.0);
    const Box t = random_box(rng, 200.0, 1.0, 50.0);
    const Box back = geometry::decode_deltas(a, geometry::encode_deltas(a, t));
    worst = std::max({worst, std::abs(back.x1 - t.x1), std::abs(back.y1 - t.y1),
                      std::abs(back.x2 - t.x2), std::abs(back.y2 - t.y2)});
  }
  const std::string detail = std::to_string(pairs) + " pairs, max err " + fmt(worst);
  return worst <= 1e-9 ? pass(name, detail) : fail(name, detail);
}

CheckResult check_sequential_decode(int images, std::uint64_t seed) {
  const std::string name = "sequential two-stage decode";
  Rng rng(seed);
  pipeline::TrainConfig cfg = pipeline::default_config();
  cfg.model.channels = 4;
  cfg.model.num_stages = 2;
  cfg.model.delta_std = {{0.1, 0.1, 0.2, 0.2}, {0.05, 0.05, 0.1, 0.1}};
  const auto anchors = geometry::generate_anchors(cfg.image_size(), cfg.anchors);
  const model::CascadeParams init = model::init_params(cfg.model, seed);
  // Large regression outputs, so both stages move the boxes noticeably.
  std::vector<numerics::Var> vars;
  for (const auto& p : init.parameters()) {
    numerics::Tensor t = p.var.value();
    if (p.name.find("reg_out") != std::string::npos) {
      for (double& v : t.data()) v = uniform(rng, -0.2, 0.2);
    }
    vars.push_back(numerics::Var::constant(std::move(t)));
  }
  const model::CascadeParams params = init.rebind(vars);
  const geometry::ImageSize size = cfg.image_size();
  const auto by_hand = [](const Box& a, const double* raw, const geometry::Deltas& sd) {
    const double d[4] = {raw[0] * sd[0], raw[1] * sd[1], raw[2] * sd[2], raw[3] * sd[3]};
    const double w = (a.x2 - a.x1) * std::exp(std::min(d[2], std::log(1000.0 / 16.0)));
    const double h = (a.y2 - a.y1) * std::exp(std::min(d[3], std::log(1000.0 / 16.0)));
    const double cx = (a.x1 + a.x2) / 2 + d[0] * (a.x2 - a.x1);
    const double cy = (a.y1 + a.y2) / 2 + d[1] * (a.y2 - a.y1);
    return Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  };
  const auto clip = [&size](Box b) {
    b.x1 = std::min(std::max(b.x1, 0.0), double(size.width));
    b.x2 = std::min(std::max(b.x2, 0.0), double(size.width));
    b.y1 = std::min(std::max(b.y1, 0.0), double(size.height));
    b.y2 = std::min(std::max(b.y2, 0.0), double(size.height));
    return b;
  };
  double worst = 0.0;
  std::size_t checked = 0;
  for (int i = 0; i < images; ++i) {
    const auto image = random_tensor(rng, {3, 64, 64}, 0.0, 1.0);
    const auto out = model::cascade_forward(numerics::Var::constant(image), params, anchors, 2,
                                            {cfg.inference.clip_refined_boxes, size});
    const auto d1 = out.stages[0].reg_deltas.value().data();
    const auto d2 = out.stages[1].reg_deltas.value().data();
    std::vector<Box> expected;
    for (std::size_t k = 0; k < anchors.boxes.size(); ++k) {
      Box b1 = by_hand(anchors.boxes[k], &d1[4 * k], cfg.model.delta_std[0]);
      if (cfg.inference.clip_refined_boxes) b1 = clip(b1);
      expected.push_back(clip(by_hand(b1, &d2[4 * k], cfg.model.delta_std[1])));
      const Box& got = out.stages[1].refined_boxes[k];
      const Box want = expected.back();
      worst = std::max({worst, std::abs(got.x1 - want.x1), std::abs(got.y1 - want.y1),
                        std::abs(got.x2 - want.x2), std::abs(got.y2 - want.y2)});
    }
    // Every final detection sits on a hand-composed box.
    pipeline::InferenceConfig ic = cfg.inference;
    ic.score_threshold = 0.0;
    for (const auto& det : pipeline::postprocess(out, size, cfg.model.num_classes, ic)) {
      double best = 1e300;
      for (const Box& e : expected) {
        best = std::min(best, std::max({std::abs(det.box.x1 - e.x1), std::abs(det.box.y1 - e.y1),
                                        std::abs(det.box.x2 - e.x2), std::abs(det.box.y2 - e.y2)}));
      }
      worst = std::max(worst, best);
      ++checked;
    }
  }
  const std::string detail = std::to_string(images) + " images, " + std::to_string(checked) +
                             " detections, max err " + fmt(worst);
  return worst <= 1e-9 ? pass(name, detail) : fail(name, detail);
}

CheckResult check_zero_offset_fcm(int instances, std::uint64_t seed) {
  const std::string name = "zero-offset FCM equals conv2d";
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const std::size_t c = static_cast<std::size_t>(uniform_int(rng, 1, 6));
    const std::size_t h = static_cast<std::size_t>(uniform_int(rng, 1, 9));
    const std::size_t w = static_cast<std::size_t>(uniform_int(rng, 1, 9));
    const std::size_t cout = uniform_int(rng, 0, 1) ? c : static_cast<std::size_t>(uniform_int(rng, 1, 6));
    using numerics::Var;
    model::FCMParams p;
    p.offset_conv.weight.var = Var::constant(numerics::Tensor({model::kOffsetChannels, c, 1, 1}));
    p.offset_conv.bias.var = Var::constant(numerics::Tensor({model::kOffsetChannels}));
    p.deform.weight.var = Var::constant(random_tensor(rng, {cout, c, 3, 3}, -1, 1));
    p.deform.bias.var = Var::constant(random_tensor(rng, {cout}, -1, 1));
    const Var x = Var::constant(random_tensor(rng, {c, h, w}, -2, 2));
    const auto got = model::fcm_forward(x, p).value();
    const auto want = numerics::conv2d(x, p.deform.weight.var, p.deform.bias.var, 1, 1).value();
    if (got.shape() != want.shape()) {
      return fail(name, "instance " + std::to_string(i) + ": shape " +
                            numerics::shape_to_string(got.shape()) + " vs " +
                            numerics::shape_to_string(want.shape()));
    }
    for (std::size_t k = 0; k < got.numel(); ++k) worst = std::max(worst, std::abs(got[k] - want[k]));
  }
  const std::string detail = std::to_string(instances) + " instances, max abs err " + fmt(worst);
  return worst <= 1e-12 ? pass(name, detail) : fail(name, detail);
}

CheckResult check_anchor_determinism() {
  const std::string name = "anchor generation";
  const geometry::AnchorSpec spec{{8, 16}, {12.0, 17.0}, {0.5, 1.0, 2.0}};
  const auto a = geometry::generate_anchors({64, 64}, spec);
  const auto b = geometry::generate_anchors({64, 64}, spec);
  if (a.boxes != b.boxes) return fail(name, "two generations differ");
  const std::size_t per = spec.scales.size() * spec.aspect_ratios.size();
  if (a.boxes.size() != (8 * 8 + 4 * 4) * per) {
    return fail(name, "unexpected anchor count " + std::to_string(a.boxes.size()));
  }
  std::size_t k = 0;
  for (const auto& lv : a.levels) {
    for (int r = 0; r < lv.height; ++r) {
      for (int c = 0; c < lv.width; ++c) {
        for (std::size_t s = 0; s < per; ++s, ++k) {
          const Box& box = a.boxes[k];
          if (std::abs(box.center_x() - (c + 0.5) * lv.stride) > 1e-9 ||
              std::abs(box.center_y() - (r + 0.5) * lv.stride) > 1e-9) {
            return fail(name, "anchor " + std::to_string(k) + " is off its cell centre");
          }
        }
      }
    }
  }
  return pass(name, std::to_string(a.boxes.size()) + " anchors, bit-identical, centred");
}

std::vector<CheckResult> run_selftest(std::uint64_t seed_offset) {
  const std::uint64_t k = seed_offset;
  return {check_box_roundtrip(10000, 14 + k),
          check_anchor_determinism(),
          check_nms_oracle(500, 11 + k),
          check_assign_oracle(500, 12 + k),
          check_ap_oracle(500, 13 + k),
          check_zero_offset_fcm(50, 16 + k),
          check_sequential_decode(5, 15 + k)};
}

}  // namespace casdet::verify
