#include "casdet/assignment.hpp"

#include <cmath>
#include <string>

#include "casdet/error.hpp"

namespace casdet::assignment {

void StageConfig::validate() const {
  if (!(t_bg >= 0.0 && t_bg <= t_fg && t_fg <= 1.0)) {
    throw ConfigError("stage thresholds need 0 <= t_bg <= t_fg <= 1, got t_bg=" +
                      std::to_string(t_bg) + " t_fg=" + std::to_string(t_fg));
  }
  if (!(std::isfinite(lambda) && lambda >= 0.0)) {
    throw ConfigError("stage lambda must be finite and >= 0");
  }
  if (!(std::isfinite(alpha) && alpha >= 0.0)) {
    throw ConfigError("stage alpha must be finite and >= 0");
  }
}

std::size_t AssignmentResult::num_foreground() const {
  std::size_t n = 0;
  for (int l : labels) n += l >= 0 ? 1 : 0;
  return n;
}

AssignmentResult assign(const std::vector<geometry::Box>& boxes,
                        const std::vector<GroundTruth>& gts,
                        const StageConfig& cfg) {
  cfg.validate();
  AssignmentResult out;
  out.labels.assign(boxes.size(), kBackground);
  out.matched_gt.assign(boxes.size(), std::nullopt);
  out.reg_targets.assign(boxes.size(), std::nullopt);
  if (gts.empty()) return out;
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = geometry::iou(boxes[k], gts[g].box);
      if (v > best) {  // strict: ties keep the lowest gt index
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best >= cfg.t_fg) {
      out.labels[k] = gts[best_gt].class_id;
      out.matched_gt[k] = best_gt;
      out.reg_targets[k] = geometry::encode_deltas(boxes[k], gts[best_gt].box);
    } else if (best < cfg.t_bg) {
      out.labels[k] = kBackground;
    } else {
      out.labels[k] = kIgnore;
    }
  }
  return out;
}

std::vector<AssignmentResult> reassign_all_stages(
    const std::vector<std::vector<geometry::Box>>& stage_boxes,
    const std::vector<GroundTruth>& gts,
    const std::vector<StageConfig>& stage_cfgs) {
  if (stage_boxes.size() != stage_cfgs.size()) {
    throw Error("reassign_all_stages: " + std::to_string(stage_boxes.size()) +
                " box sets but " + std::to_string(stage_cfgs.size()) +
                " stage configs");
  }
  std::vector<AssignmentResult> out;
  out.reserve(stage_boxes.size());
  for (std::size_t i = 0; i < stage_boxes.size(); ++i) {
    out.push_back(assign(stage_boxes[i], gts, stage_cfgs[i]));
  }
  return out;
}

}  // namespace casdet::assignment
