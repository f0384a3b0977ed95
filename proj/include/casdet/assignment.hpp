#pragma once

#include <optional>
#include <vector>

#include "casdet/geometry.hpp"

namespace casdet::assignment {

inline constexpr int kIgnore = -2;
inline constexpr int kBackground = -1;

// Per-stage label thresholds and loss weights.
struct StageConfig {
  double t_fg = 0.5;    // IoU >= t_fg: foreground
  double t_bg = 0.4;    // IoU <  t_bg: background; in between: ignored
  double lambda = 2.0;  // localization weight inside the stage loss
  double alpha = 1.0;   // weight of the stage in the total loss

  // Throws ConfigError unless 0 <= t_bg <= t_fg <= 1 and the weights are
  // finite and non-negative. Zero weights switch a term off in ablations.
  void validate() const;
};

struct GroundTruth {
  geometry::Box box;
  int class_id = 0;
};

struct AssignmentResult {
  std::vector<int> labels;  // kIgnore, kBackground or a class id
  std::vector<std::optional<int>> matched_gt;
  std::vector<std::optional<geometry::Deltas>> reg_targets;

  std::size_t num_foreground() const;
};

AssignmentResult assign(const std::vector<geometry::Box>& boxes,
                        const std::vector<GroundTruth>& gts,
                        const StageConfig& cfg);

// One independent assign() per stage on that stage's input boxes.
std::vector<AssignmentResult> reassign_all_stages(
    const std::vector<std::vector<geometry::Box>>& stage_boxes,
    const std::vector<GroundTruth>& gts,
    const std::vector<StageConfig>& stage_cfgs);

}  // namespace casdet::assignment
