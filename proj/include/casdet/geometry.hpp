#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

namespace casdet::geometry {

// Axis-aligned rectangle in image pixel coordinates.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  bool operator==(const Box&) const = default;
};

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
};

// (dx, dy, dw, dh)
using Deltas = std::array<double, 4>;

// Largest dw/dh accepted before exponentiation.
inline const double kMaxLogScale = std::log(1000.0 / 16.0);

// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b);

// Regression target of `target` relative to `anchor`. Throws if either box
// has non-positive area.
Deltas encode_deltas(const Box& anchor, const Box& target);

struct ImageSize {
  int height = 0;
  int width = 0;
};

// Inverse of encode_deltas. dw/dh are clamped to kMaxLogScale; the result is
// optionally clipped to [0,W]x[0,H].
Box decode_deltas(const Box& anchor, const Deltas& deltas,
                  std::optional<ImageSize> clip_to = std::nullopt);

Box clip_box(const Box& b, ImageSize size);

// Greedy suppression for detections of a single class. Candidates are visited
// by descending score (ties: lower input index first); a candidate is dropped
// when its IoU with an already kept box exceeds `iou_threshold`.
std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_threshold);

// Groups by class_id and runs nms per class. The result is sorted by
// descending score, ties by class then by kept order.
std::vector<Detection> batched_nms(const std::vector<Detection>& dets,
                                   double iou_threshold);

struct AnchorSpec {
  std::vector<int> level_strides;
  // Side length of an anchor on the first level; level l uses
  // scale * stride_l / stride_0.
  std::vector<double> scales;
  // height / width; area is preserved across ratios.
  std::vector<double> aspect_ratios;

  int anchors_per_location() const {
    return static_cast<int>(scales.size() * aspect_ratios.size());
  }
};

struct AnchorLevel {
  int stride = 0;
  int height = 0;  // feature map rows
  int width = 0;
};

// Anchors ordered level-major, then row, column, then shape (scale-major over
// ratios).
struct AnchorGrid {
  AnchorSpec spec;
  std::vector<AnchorLevel> levels;
  std::vector<Box> boxes;
};

// Throws ConfigError when a stride does not divide the image size or the spec
// is empty.
AnchorGrid generate_anchors(ImageSize image, const AnchorSpec& spec);

}  // namespace casdet::geometry
