#include "casdet/verify/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "casdet/error.hpp"
#include "casdet/numerics/ops.hpp"

namespace casdet::verify {

using geometry::Box;
using geometry::Detection;

double oracle_iou(const Box& a, const Box& b) {
  const double ow = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double oh = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ow * oh;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Detection> oracle_nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<bool> alive(dets.size(), true);
  std::vector<Detection> kept;
  for (;;) {
    int best = -1;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && (best < 0 || dets[i].score > dets[best].score)) best = static_cast<int>(i);
    }
    if (best < 0) break;
    kept.push_back(dets[best]);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && oracle_iou(dets[best].box, dets[i].box) > iou_threshold) alive[i] = false;
    }
    alive[best] = false;
  }
  return kept;
}

assignment::AssignmentResult oracle_assign(const std::vector<Box>& boxes,
                                           const std::vector<assignment::GroundTruth>& gts,
                                           const assignment::StageConfig& cfg) {
  cfg.validate();
  assignment::AssignmentResult r;
  for (const Box& b : boxes) {
    double m = 0.0;
    std::size_t arg = gts.size();
    for (std::size_t g = gts.size(); g-- > 0;) {
      const double v = oracle_iou(b, gts[g].box);
      if (arg == gts.size() || v >= m) {
        m = v;
        arg = g;
      }
    }
    if (arg < gts.size() && m >= cfg.t_fg) {
      const Box& t = gts[arg].box;
      const double wa = b.x2 - b.x1;
      const double ha = b.y2 - b.y1;
      r.labels.push_back(gts[arg].class_id);
      r.matched_gt.push_back(static_cast<int>(arg));
      r.reg_targets.push_back(geometry::Deltas{
          ((t.x1 + t.x2) / 2 - (b.x1 + b.x2) / 2) / wa, ((t.y1 + t.y2) / 2 - (b.y1 + b.y2) / 2) / ha,
          std::log((t.x2 - t.x1) / wa), std::log((t.y2 - t.y1) / ha)});
    } else {
      r.labels.push_back(gts.empty() || m < cfg.t_bg ? assignment::kBackground : assignment::kIgnore);
      r.matched_gt.push_back(std::nullopt);
      r.reg_targets.push_back(std::nullopt);
    }
  }
  return r;
}

double oracle_ap(const std::vector<evaluation::ImageDetections>& dets,
                 const std::vector<evaluation::ImageGroundTruth>& gts, double iou_threshold) {
  std::set<int> classes;
  for (const auto& img : gts) {
    for (const auto& g : img) classes.insert(g.class_id);
  }
  if (classes.empty()) return 0.0;
  double total = 0.0;
  for (int cls : classes) {
    struct Item {
      double score;
      std::size_t image;
      std::size_t index;
      bool tp;
    };
    std::vector<Item> items;
    double npos = 0.0;
    for (std::size_t img = 0; img < gts.size(); ++img) {
      std::vector<std::size_t> gidx;
      for (std::size_t g = 0; g < gts[img].size(); ++g) {
        if (gts[img][g].class_id == cls) gidx.push_back(g);
      }
      npos += static_cast<double>(gidx.size());
      if (img >= dets.size()) continue;
      std::vector<std::size_t> didx;
      for (std::size_t d = 0; d < dets[img].size(); ++d) {
        if (dets[img][d].class_id == cls) didx.push_back(d);
      }
      // Selection order by score, earliest index first on ties.
      std::vector<bool> used(didx.size(), false);
      std::vector<bool> taken(gidx.size(), false);
      for (std::size_t step = 0; step < didx.size(); ++step) {
        std::size_t pick = didx.size();
        for (std::size_t k = 0; k < didx.size(); ++k) {
          if (used[k]) continue;
          if (pick == didx.size() || dets[img][didx[k]].score > dets[img][didx[pick]].score) {
            pick = k;
          }
        }
        used[pick] = true;
        const Detection& det = dets[img][didx[pick]];
        double best = -1.0;
        std::size_t best_g = gidx.size();
        for (std::size_t k = 0; k < gidx.size(); ++k) {
          if (taken[k]) continue;
          const double v = oracle_iou(det.box, gts[img][gidx[k]].box);
          if (v > best) {
            best = v;
            best_g = k;
          }
        }
        const bool tp = best_g < gidx.size() && best >= iou_threshold;
        if (tp) taken[best_g] = true;
        items.push_back({det.score, img, step, tp});
      }
    }
    if (npos == 0.0) continue;
    std::stable_sort(items.begin(), items.end(),
                     [](const Item& a, const Item& b) { return a.score > b.score; });
    std::vector<double> rec;
    std::vector<double> prec;
    double tp = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].tp) tp += 1.0;
      rec.push_back(tp / npos);
      prec.push_back(tp / static_cast<double>(i + 1));
    }
    double acc = 0.0;
    for (int r = 0; r <= 100; ++r) {
      const double level = r / 100.0;
      double best = 0.0;
      for (std::size_t i = 0; i < rec.size(); ++i) {
        if (rec[i] >= level) best = std::max(best, prec[i]);
      }
      acc += best;
    }
    total += acc / 101.0;
  }
  return total / static_cast<double>(classes.size());
}

std::vector<Detection> reference_single_stage(const numerics::Tensor& image,
                                              const model::CascadeParams& params,
                                              const geometry::AnchorGrid& anchors,
                                              const pipeline::InferenceConfig& cfg) {
  if (params.stages.size() != 1) {
    throw Error("reference_single_stage needs a one-stage model, got " +
                std::to_string(params.stages.size()) + " stages");
  }
  using numerics::Var;
  const auto& mc = params.config;
  const auto conv = [](const Var& x, const model::ConvLayer& c, int stride) {
    return numerics::conv2d(x, c.weight.var, c.bias.var, stride, 1);
  };
  // Backbone: stride-2 convs, keep the maps whose stride is a pyramid level.
  std::vector<Var> levels;
  Var x = Var::constant(image);
  int stride = 1;
  for (const auto& layer : params.backbone) {
    x = numerics::relu(conv(x, layer, 2));
    stride *= 2;
    if (std::find(mc.level_strides.begin(), mc.level_strides.end(), stride) !=
        mc.level_strides.end()) {
      levels.push_back(x);
    }
  }
  const std::size_t a_count = static_cast<std::size_t>(mc.anchors_per_location);
  const std::size_t k_count = static_cast<std::size_t>(mc.num_classes);
  const geometry::ImageSize size{static_cast<int>(image.dim(1)), static_cast<int>(image.dim(2))};
  const auto& head = params.stages[0].head;
  const geometry::Deltas sd = mc.stage_delta_std(0);
  std::vector<Detection> candidates;
  std::size_t anchor = 0;
  for (const Var& f : levels) {
    Var t = f;
    for (const auto& layer : head.tower) t = numerics::relu(conv(t, layer, 1));
    const numerics::Tensor cls = conv(t, head.cls_out, 1).value();  // [A*K,H,W]
    const numerics::Tensor reg = conv(t, head.reg_out, 1).value();  // [A*4,H,W]
    const std::size_t h = cls.dim(1);
    const std::size_t w = cls.dim(2);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t a = 0; a < a_count; ++a, ++anchor) {
          geometry::Deltas d{};
          for (std::size_t j = 0; j < 4; ++j) d[j] = reg[((a * 4 + j) * h + r) * w + c] * sd[j];
          const Box box = geometry::clip_box(geometry::decode_deltas(anchors.boxes.at(anchor), d),
                                             size);
          for (std::size_t k = 0; k < k_count; ++k) {
            const double z = cls[((a * k_count + k) * h + r) * w + c];
            const double s = 1.0 / (1.0 + std::exp(-z));
            if (s > cfg.score_threshold) candidates.push_back({box, static_cast<int>(k), s});
          }
        }
      }
    }
  }
  if (anchor != anchors.boxes.size()) {
    throw Error("reference_single_stage: model covers " + std::to_string(anchor) +
                " anchors, grid has " + std::to_string(anchors.boxes.size()));
  }
  auto kept = geometry::batched_nms(candidates, cfg.nms_threshold);
  if (kept.size() > static_cast<std::size_t>(cfg.top_k)) kept.resize(cfg.top_k);
  return kept;
}

}  // namespace casdet::verify
