#include "casdet/geometry.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <string>

#include "casdet/error.hpp"

namespace casdet::geometry {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

Deltas encode_deltas(const Box& anchor, const Box& target) {
  if (!(anchor.width() > 0.0 && anchor.height() > 0.0)) {
    throw Error("encode_deltas: anchor has zero area");
  }
  if (!(target.width() > 0.0 && target.height() > 0.0)) {
    throw Error("encode_deltas: target has zero area");
  }
  return {(target.center_x() - anchor.center_x()) / anchor.width(),
          (target.center_y() - anchor.center_y()) / anchor.height(),
          std::log(target.width() / anchor.width()),
          std::log(target.height() / anchor.height())};
}

Box clip_box(const Box& b, ImageSize size) {
  const double w = size.width;
  const double h = size.height;
  return {std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h),
          std::clamp(b.x2, 0.0, w), std::clamp(b.y2, 0.0, h)};
}

Box decode_deltas(const Box& anchor, const Deltas& d,
                  std::optional<ImageSize> clip_to) {
  const double wa = anchor.width();
  const double ha = anchor.height();
  const double w = wa * std::exp(std::min(d[2], kMaxLogScale));
  const double h = ha * std::exp(std::min(d[3], kMaxLogScale));
  // Written relative to the anchor edges so zero deltas return the anchor exactly.
  const double sx = d[0] * wa;
  const double sy = d[1] * ha;
  const double gx = 0.5 * (w - wa);
  const double gy = 0.5 * (h - ha);
  Box out{anchor.x1 + sx - gx, anchor.y1 + sy - gy, anchor.x2 + sx + gx, anchor.y2 + sy + gy};
  if (clip_to) out = clip_box(out, *clip_to);
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Box& cand = dets[idx].box;
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou(k.box, cand) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

std::vector<Detection> batched_nms(const std::vector<Detection>& dets,
                                   double iou_threshold) {
  std::map<int, std::vector<Detection>> by_class;
  for (const Detection& d : dets) by_class[d.class_id].push_back(d);
  std::vector<Detection> out;
  for (auto& [cls, group] : by_class) {
    auto kept = nms(group, iou_threshold);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    return a.score > b.score;
  });
  return out;
}

AnchorGrid generate_anchors(ImageSize image, const AnchorSpec& spec) {
  if (spec.level_strides.empty() || spec.scales.empty() ||
      spec.aspect_ratios.empty()) {
    throw ConfigError("anchor spec needs at least one stride, scale and ratio");
  }
  for (double s : spec.scales) {
    if (!(s > 0.0)) throw ConfigError("anchor scales must be positive");
  }
  for (double r : spec.aspect_ratios) {
    if (!(r > 0.0)) throw ConfigError("anchor aspect ratios must be positive");
  }
  AnchorGrid grid;
  grid.spec = spec;
  const double base_stride = spec.level_strides.front();
  for (int stride : spec.level_strides) {
    if (stride <= 0 || image.height % stride != 0 || image.width % stride != 0) {
      throw ConfigError("anchor stride " + std::to_string(stride) +
                        " does not divide image size " +
                        std::to_string(image.height) + "x" +
                        std::to_string(image.width));
    }
    AnchorLevel level{stride, image.height / stride, image.width / stride};
    grid.levels.push_back(level);
    const double level_factor = stride / base_stride;
    for (int row = 0; row < level.height; ++row) {
      for (int col = 0; col < level.width; ++col) {
        const double cx = (col + 0.5) * stride;
        const double cy = (row + 0.5) * stride;
        for (double scale : spec.scales) {
          for (double ratio : spec.aspect_ratios) {
            const double side = scale * level_factor;
            const double h = side * std::sqrt(ratio);
            const double w = side / std::sqrt(ratio);
            grid.boxes.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
          }
        }
      }
    }
  }
  return grid;
}

}  // namespace casdet::geometry
