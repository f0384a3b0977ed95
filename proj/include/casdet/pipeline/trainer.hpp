#pragma once

#include <functional>
#include <string>
#include <vector>

#include "casdet/evaluation.hpp"
#include "casdet/losses.hpp"
#include "casdet/model.hpp"
#include "casdet/pipeline/config.hpp"
#include "casdet/pipeline/scene.hpp"

namespace casdet::pipeline {

struct EpochLog {
  int epoch = 0;                  // 1-based
  losses::LossBreakdown mean;     // averaged over training images
  double val_ap = 0.0;
};

struct TrainResult {
  model::CascadeParams params;
  std::vector<EpochLog> log;
};

// Loss of one image, with its graph; `total` is ready for backward().
struct ImageLoss {
  losses::CascadeLoss loss;
  std::vector<assignment::AssignmentResult> assignments;
};

// Forward pass plus per-stage assignment and loss for one scene. Later stages
// are assigned on the (detached, optionally clipped) boxes of the stage before.
ImageLoss image_loss(const SyntheticScene& scene, const model::CascadeParams& params,
                     const geometry::AnchorGrid& anchors, const TrainConfig& cfg);

// Same, but with labels and regression targets held fixed. Boxes are
// constants of the loss, so this is the function whose gradient backward()
// computes.
ImageLoss image_loss(const SyntheticScene& scene, const model::CascadeParams& params,
                     const geometry::AnchorGrid& anchors, const TrainConfig& cfg,
                     const std::vector<assignment::AssignmentResult>& frozen);

// Runs inference on every scene and scores it.
evaluation::APReport evaluate(const model::CascadeParams& params,
                              const geometry::AnchorGrid& anchors,
                              const std::vector<SyntheticScene>& scenes,
                              const InferenceConfig& cfg);

using EpochCallback = std::function<void(const EpochLog&)>;

// Seeded SGD over `train_set`; validation AP after every epoch. Throws
// DivergenceError naming the first non-finite tensor if the loss blows up.
TrainResult train(const TrainConfig& cfg, const std::vector<SyntheticScene>& train_set,
                  const std::vector<SyntheticScene>& val_set,
                  const EpochCallback& on_epoch = {});

// Generates the train/val scenes from cfg.seed and trains.
TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// CSV with header epoch,stage,cls_loss,loc_loss,total,val_ap; one row per
// epoch and stage.
std::string metrics_csv(const std::vector<EpochLog>& log);

}  // namespace casdet::pipeline
