#pragma once

#include <optional>
#include <span>
#include <vector>

#include "casdet/assignment.hpp"
#include "casdet/geometry.hpp"
#include "casdet/numerics/autograd.hpp"

namespace casdet::losses {

using numerics::Var;

struct LossSettings {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double smooth_l1_beta = 1.0 / 9.0;
};

// Sigmoid focal loss over logits[N, num_classes]. Foreground rows get a one-hot
// target, background rows all zeros, ignored rows (kIgnore) contribute nothing.
// The sum is divided by max(1, #foreground rows).
Var focal_loss(const Var& logits, std::span<const int> labels, double alpha,
               double gamma);

// Smooth-L1 over rows of pred[N,4] that have a target; rows without one are
// skipped. The sum is divided by max(1, #rows with a target).
Var smooth_l1(const Var& pred,
              std::span<const std::optional<geometry::Deltas>> targets,
              double beta);

struct StageLoss {
  Var cls;
  Var loc;
  Var combined;  // cls + lambda * loc
};

// Regression targets are divided elementwise by `target_std` before the
// smooth-L1 comparison.
StageLoss stage_loss(const Var& cls_logits, const Var& reg_preds,
                     const assignment::AssignmentResult& assignment,
                     const assignment::StageConfig& cfg,
                     const LossSettings& settings = {},
                     const geometry::Deltas& target_std = {1.0, 1.0, 1.0, 1.0});

struct LossBreakdown {
  struct Stage {
    double cls_loss = 0.0;
    double loc_loss = 0.0;
  };
  std::vector<Stage> per_stage;
  double total = 0.0;
};

struct CascadeLoss {
  Var total;  // sum_i alpha_i * combined_i
  LossBreakdown breakdown;
};

CascadeLoss total_loss(std::span<const StageLoss> stages,
                       std::span<const assignment::StageConfig> cfgs);

}  // namespace casdet::losses
