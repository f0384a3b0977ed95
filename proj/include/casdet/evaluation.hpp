#pragma once

#include <array>
#include <map>
#include <vector>

#include "casdet/assignment.hpp"
#include "casdet/geometry.hpp"
#include "casdet/model.hpp"
#include "casdet/pipeline/config.hpp"
#include "casdet/pipeline/scene.hpp"

namespace casdet::evaluation {

using ImageDetections = std::vector<geometry::Detection>;
using ImageGroundTruth = std::vector<assignment::GroundTruth>;

// COCO-style AP at one IoU threshold: per class, detections from all images
// are ranked by score; each is a true positive when its best-IoU unmatched gt
// of the same class (same image) reaches the threshold. Precision is made
// monotone and sampled at recall 0, 0.01, ..., 1. The result is the mean over
// classes that have at least one gt; 0 when there are none.
double ap_at_iou(const std::vector<ImageDetections>& dets,
                 const std::vector<ImageGroundTruth>& gts, double iou_threshold);

// 0.50, 0.55, ..., 0.95
std::array<double, 10> coco_iou_thresholds();

struct APReport {
  double ap = 0.0;                   // mean of `per_threshold`
  std::array<double, 10> per_threshold{};
  std::map<int, double> ap_at;       // keyed by IoU percent: 50, 60, 70, 80, 90
};

APReport coco_ap(const std::vector<ImageDetections>& dets,
                 const std::vector<ImageGroundTruth>& gts);

struct CorrelationPair {
  double confidence = 0.0;
  double iou = 0.0;
};

inline constexpr double kMinCorrelationIou = 0.5;
inline constexpr std::size_t kMinCorrelationPairs = 30;

struct StageCorrelation {
  int stage = 1;  // 1-based
  std::vector<CorrelationPair> pairs;
  double pearson_r = 0.0;
  bool zero_variance = false;  // r undefined, reported as 0
  bool low_sample = false;     // fewer than kMinCorrelationPairs pairs
  // Mean confidence in ten IoU bins of width 0.05 over [0.5, 1.0].
  std::array<double, 10> binned_mean_confidence{};
  std::array<int, 10> bin_counts{};
};

struct CorrelationReport {
  std::vector<StageCorrelation> stages;
};

// Pearson r; zero_variance is set (and r = 0) when either side is constant or
// fewer than two pairs exist.
double pearson(const std::vector<CorrelationPair>& pairs, bool* zero_variance = nullptr);

// Fills r, flags and bins from a list of pairs.
StageCorrelation summarize_pairs(int stage, std::vector<CorrelationPair> pairs);

// Raw predictions of one stage (refined boxes b^i and that stage's own scores),
// before NMS: for each box the top-scoring class is kept if above the score
// threshold and paired with the best-IoU gt of that class; pairs below IoU 0.5
// are dropped.
std::vector<CorrelationPair> stage_pairs(const model::CascadeOutput& out, int stage_index,
                                         const ImageGroundTruth& gts, geometry::ImageSize size,
                                         int num_classes, double score_threshold);

// Runs the model over `scenes` and reports one StageCorrelation per stage.
CorrelationReport correlation_report(const model::CascadeParams& params,
                                     const geometry::AnchorGrid& anchors,
                                     const std::vector<pipeline::SyntheticScene>& scenes,
                                     const pipeline::InferenceConfig& cfg);

}  // namespace casdet::evaluation
