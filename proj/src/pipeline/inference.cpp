#include "casdet/pipeline/inference.hpp"

#include <cmath>

#include "casdet/numerics/autograd.hpp"

namespace casdet::pipeline {

std::vector<double> stage_scores(const model::StageOutput& stage) {
  auto z = stage.cls_logits.value().data();
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-z[i]));
  return out;
}

std::vector<double> ensemble_scores(const model::CascadeOutput& out, EnsembleMode mode) {
  if (mode == EnsembleMode::kLast || out.stages.size() == 1) {
    return stage_scores(out.stages.back());
  }
  std::vector<double> acc = stage_scores(out.stages.front());
  for (std::size_t s = 1; s < out.stages.size(); ++s) {
    const auto sc = stage_scores(out.stages[s]);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += sc[i];
  }
  const double n = static_cast<double>(out.stages.size());
  for (double& v : acc) v /= n;
  return acc;
}

std::vector<geometry::Detection> postprocess(const model::CascadeOutput& out,
                                             geometry::ImageSize image_size,
                                             int num_classes,
                                             const InferenceConfig& cfg) {
  const auto scores = ensemble_scores(out, cfg.ensemble_mode);
  const auto& boxes = out.stages.back().refined_boxes;
  const std::size_t k = static_cast<std::size_t>(num_classes);
  std::vector<geometry::Detection> candidates;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const geometry::Box box = geometry::clip_box(boxes[i], image_size);
    for (std::size_t c = 0; c < k; ++c) {
      const double s = scores[i * k + c];
      if (s > cfg.score_threshold) {
        candidates.push_back({box, static_cast<int>(c), s});
      }
    }
  }
  auto kept = geometry::batched_nms(candidates, cfg.nms_threshold);
  if (kept.size() > static_cast<std::size_t>(cfg.top_k)) kept.resize(cfg.top_k);
  return kept;
}

std::vector<geometry::Detection> infer(const numerics::Tensor& image,
                                       const model::CascadeParams& params,
                                       const geometry::AnchorGrid& anchors,
                                       const InferenceConfig& cfg) {
  const geometry::ImageSize size{static_cast<int>(image.dim(1)), static_cast<int>(image.dim(2))};
  model::ForwardOptions opts{cfg.clip_refined_boxes, size};
  const auto out = model::cascade_forward(numerics::Var::constant(image), params, anchors,
                                          params.config.num_stages, opts);
  return postprocess(out, size, params.config.num_classes, cfg);
}

}  // namespace casdet::pipeline
