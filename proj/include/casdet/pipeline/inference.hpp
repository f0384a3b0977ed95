#pragma once

#include <vector>

#include "casdet/geometry.hpp"
#include "casdet/model.hpp"
#include "casdet/numerics/tensor.hpp"
#include "casdet/pipeline/config.hpp"

namespace casdet::pipeline {

// Per-class sigmoid scores [N, K] of one stage, as a flat row-major vector.
std::vector<double> stage_scores(const model::StageOutput& stage);

// Scores used for ranking: the mean of all stage scores (kAverage) or the last
// stage's scores (kLast).
std::vector<double> ensemble_scores(const model::CascadeOutput& out, EnsembleMode mode);

// Turns a cascade output into final detections: last-stage boxes clipped to
// the image, ensemble scores, score threshold, per-class NMS, top-K.
std::vector<geometry::Detection> postprocess(const model::CascadeOutput& out,
                                             geometry::ImageSize image_size,
                                             int num_classes,
                                             const InferenceConfig& cfg);

std::vector<geometry::Detection> infer(const numerics::Tensor& image,
                                       const model::CascadeParams& params,
                                       const geometry::AnchorGrid& anchors,
                                       const InferenceConfig& cfg);

}  // namespace casdet::pipeline
