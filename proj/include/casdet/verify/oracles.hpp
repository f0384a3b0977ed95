#pragma once

#include <vector>

#include "casdet/assignment.hpp"
#include "casdet/evaluation.hpp"
#include "casdet/geometry.hpp"
#include "casdet/model.hpp"
#include "casdet/numerics/tensor.hpp"
#include "casdet/pipeline/config.hpp"

// Slow, independent re-implementations used as test oracles. None of them
// calls the function it checks.
namespace casdet::verify {

// Intersection from explicit interval overlaps.
double oracle_iou(const geometry::Box& a, const geometry::Box& b);

// Greedy suppression by definition: repeatedly take the best remaining
// candidate (lowest index on ties), keep it, drop everything overlapping it by
// more than the threshold.
std::vector<geometry::Detection> oracle_nms(const std::vector<geometry::Detection>& dets,
                                            double iou_threshold);

// Per-box scan over all gts; no shared code with assignment::assign.
assignment::AssignmentResult oracle_assign(const std::vector<geometry::Box>& boxes,
                                           const std::vector<assignment::GroundTruth>& gts,
                                           const assignment::StageConfig& cfg);

// AP at one IoU threshold computed from explicit PR points: the interpolated
// precision at recall r is the maximum precision over all points with recall
// >= r.
double oracle_ap(const std::vector<evaluation::ImageDetections>& dets,
                 const std::vector<evaluation::ImageGroundTruth>& gts, double iou_threshold);

// A plain single-stage anchor detector written directly against conv2d and
// relu: backbone, one head, sigmoid scores, decode on the anchors, score
// threshold, per-class NMS, top-K. `params` must have exactly one stage.
std::vector<geometry::Detection> reference_single_stage(const numerics::Tensor& image,
                                                        const model::CascadeParams& params,
                                                        const geometry::AnchorGrid& anchors,
                                                        const pipeline::InferenceConfig& cfg);

}  // namespace casdet::verify
