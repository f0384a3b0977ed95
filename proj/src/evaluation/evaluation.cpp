#include "casdet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "casdet/error.hpp"
#include "casdet/pipeline/inference.hpp"

namespace casdet::evaluation {

namespace {

constexpr int kRecallPoints = 101;

struct Ranked {
  double score;
  bool tp;
};

double class_ap(const std::vector<ImageDetections>& dets,
                const std::vector<ImageGroundTruth>& gts, int cls, double thr) {
  std::size_t npos = 0;
  std::vector<Ranked> ranked;
  for (std::size_t img = 0; img < gts.size(); ++img) {
    std::vector<const geometry::Box*> gt_boxes;
    for (const auto& g : gts[img]) {
      if (g.class_id == cls) gt_boxes.push_back(&g.box);
    }
    npos += gt_boxes.size();
    std::vector<const geometry::Detection*> d;
    if (img < dets.size()) {
      for (const auto& det : dets[img]) {
        if (det.class_id == cls) d.push_back(&det);
      }
    }
    std::stable_sort(d.begin(), d.end(), [](const auto* a, const auto* b) {
      return a->score > b->score;
    });
    std::vector<bool> taken(gt_boxes.size(), false);
    for (const auto* det : d) {
      double best = -1.0;
      int best_gt = -1;
      for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
        if (taken[g]) continue;
        const double v = geometry::iou(det->box, *gt_boxes[g]);
        if (v > best) {
          best = v;
          best_gt = static_cast<int>(g);
        }
      }
      const bool tp = best_gt >= 0 && best >= thr;
      if (tp) taken[best_gt] = true;
      ranked.push_back({det->score, tp});
    }
  }
  if (npos == 0) return 0.0;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
  std::vector<double> recall(ranked.size());
  std::vector<double> precision(ranked.size());
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    (ranked[i].tp ? tp : fp) += 1.0;
    recall[i] = tp / static_cast<double>(npos);
    precision[i] = tp / (tp + fp);
  }
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double acc = 0.0;
  for (int r = 0; r < kRecallPoints; ++r) {
    const double level = static_cast<double>(r) / (kRecallPoints - 1);
    auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) acc += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return acc / kRecallPoints;
}

}  // namespace

double ap_at_iou(const std::vector<ImageDetections>& dets,
                 const std::vector<ImageGroundTruth>& gts, double iou_threshold) {
  if (dets.size() > gts.size()) {
    throw Error("ap_at_iou: detections given for " + std::to_string(dets.size()) +
                " images but ground truth for " + std::to_string(gts.size()));
  }
  std::set<int> classes;
  for (const auto& img : gts) {
    for (const auto& g : img) classes.insert(g.class_id);
  }
  if (classes.empty()) return 0.0;
  double acc = 0.0;
  for (int c : classes) acc += class_ap(dets, gts, c, iou_threshold);
  return acc / static_cast<double>(classes.size());
}

std::array<double, 10> coco_iou_thresholds() {
  std::array<double, 10> t{};
  for (int i = 0; i < 10; ++i) t[i] = 0.5 + 0.05 * i;
  return t;
}

APReport coco_ap(const std::vector<ImageDetections>& dets,
                 const std::vector<ImageGroundTruth>& gts) {
  APReport r;
  const auto thr = coco_iou_thresholds();
  double acc = 0.0;
  for (int i = 0; i < 10; ++i) {
    r.per_threshold[i] = ap_at_iou(dets, gts, thr[i]);
    acc += r.per_threshold[i];
  }
  r.ap = acc / 10.0;
  for (int i = 0; i < 10; i += 2) r.ap_at[50 + 5 * i] = r.per_threshold[i];
  return r;
}

double pearson(const std::vector<CorrelationPair>& pairs, bool* zero_variance) {
  if (zero_variance) *zero_variance = false;
  const double n = static_cast<double>(pairs.size());
  if (pairs.size() < 2) {
    if (zero_variance) *zero_variance = true;
    return 0.0;
  }
  bool const_c = true;
  bool const_i = true;
  for (const auto& p : pairs) {
    const_c = const_c && p.confidence == pairs.front().confidence;
    const_i = const_i && p.iou == pairs.front().iou;
  }
  if (const_c || const_i) {
    if (zero_variance) *zero_variance = true;
    return 0.0;
  }
  double mc = 0.0;
  double mi = 0.0;
  for (const auto& p : pairs) {
    mc += p.confidence;
    mi += p.iou;
  }
  mc /= n;
  mi /= n;
  double scc = 0.0;
  double sii = 0.0;
  double sci = 0.0;
  for (const auto& p : pairs) {
    const double dc = p.confidence - mc;
    const double di = p.iou - mi;
    scc += dc * dc;
    sii += di * di;
    sci += dc * di;
  }
  if (scc <= 0.0 || sii <= 0.0) {
    if (zero_variance) *zero_variance = true;
    return 0.0;
  }
  return std::clamp(sci / std::sqrt(scc * sii), -1.0, 1.0);
}

StageCorrelation summarize_pairs(int stage, std::vector<CorrelationPair> pairs) {
  StageCorrelation s;
  s.stage = stage;
  s.pearson_r = pearson(pairs, &s.zero_variance);
  s.low_sample = pairs.size() < kMinCorrelationPairs;
  std::array<double, 10> sums{};
  for (const auto& p : pairs) {
    int bin = static_cast<int>(std::floor((p.iou - kMinCorrelationIou) / 0.05));
    bin = std::clamp(bin, 0, 9);
    sums[bin] += p.confidence;
    s.bin_counts[bin] += 1;
  }
  for (int b = 0; b < 10; ++b) {
    s.binned_mean_confidence[b] = s.bin_counts[b] ? sums[b] / s.bin_counts[b] : 0.0;
  }
  s.pairs = std::move(pairs);
  return s;
}

std::vector<CorrelationPair> stage_pairs(const model::CascadeOutput& out, int stage_index,
                                         const ImageGroundTruth& gts, geometry::ImageSize size,
                                         int num_classes, double score_threshold) {
  const auto& stage = out.stages.at(static_cast<std::size_t>(stage_index));
  const auto scores = pipeline::stage_scores(stage);
  const std::size_t k = static_cast<std::size_t>(num_classes);
  std::vector<CorrelationPair> pairs;
  for (std::size_t i = 0; i < stage.refined_boxes.size(); ++i) {
    std::size_t best_c = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (scores[i * k + c] > scores[i * k + best_c]) best_c = c;
    }
    const double conf = scores[i * k + best_c];
    if (!(conf > score_threshold)) continue;
    const geometry::Box box = geometry::clip_box(stage.refined_boxes[i], size);
    double best_iou = 0.0;
    for (const auto& g : gts) {
      if (g.class_id != static_cast<int>(best_c)) continue;
      best_iou = std::max(best_iou, geometry::iou(box, g.box));
    }
    if (best_iou >= kMinCorrelationIou) pairs.push_back({conf, best_iou});
  }
  return pairs;
}

CorrelationReport correlation_report(const model::CascadeParams& params,
                                     const geometry::AnchorGrid& anchors,
                                     const std::vector<pipeline::SyntheticScene>& scenes,
                                     const pipeline::InferenceConfig& cfg) {
  const int num_stages = params.config.num_stages;
  std::vector<std::vector<CorrelationPair>> per_stage(static_cast<std::size_t>(num_stages));
  for (const auto& scene : scenes) {
    const geometry::ImageSize size{static_cast<int>(scene.image.dim(1)),
                                   static_cast<int>(scene.image.dim(2))};
    model::ForwardOptions opts{cfg.clip_refined_boxes, size};
    const auto out = model::cascade_forward(numerics::Var::constant(scene.image), params,
                                            anchors, num_stages, opts);
    for (int s = 0; s < num_stages; ++s) {
      auto p = stage_pairs(out, s, scene.gts, size, params.config.num_classes,
                           cfg.score_threshold);
      per_stage[s].insert(per_stage[s].end(), p.begin(), p.end());
    }
  }
  CorrelationReport report;
  for (int s = 0; s < num_stages; ++s) {
    report.stages.push_back(summarize_pairs(s + 1, std::move(per_stage[s])));
  }
  return report;
}

}  // namespace casdet::evaluation
