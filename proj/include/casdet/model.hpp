#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "casdet/geometry.hpp"
#include "casdet/numerics/autograd.hpp"
#include "casdet/numerics/optim.hpp"

namespace casdet::model {

using numerics::Parameter;
using numerics::Var;

struct ModelConfig {
  int in_channels = 3;
  int num_classes = 3;
  int channels = 16;    // width of backbone outputs, heads and FCM
  int head_depth = 2;   // convs in the shared head tower
  int num_stages = 2;   // 1..3
  bool use_fcm = true;  // re-align features between stages
  int anchors_per_location = 1;
  // Feature levels taken from the backbone, as strides (powers of two). The
  // backbone has log2(max stride) stride-2 convs.
  std::vector<int> level_strides{8, 16};
  double prior_pi = 0.01;  // initial foreground probability of cls_out
  // Per-stage scale of the regression output: the head predicts deltas / std.
  // Empty means 1 for every stage.
  std::vector<geometry::Deltas> delta_std;

  void validate() const;
  int backbone_depth() const;
  geometry::Deltas stage_delta_std(int stage) const;  // 0-based
};

struct ConvLayer {
  Parameter weight;  // [C_out, C_in, k, k]
  Parameter bias;    // [C_out]
};

struct HeadParams {
  std::vector<ConvLayer> tower;  // 3x3, stride 1, same padding, relu
  ConvLayer cls_out;             // 3x3 -> A * num_classes
  ConvLayer reg_out;             // 3x3 -> A * 4
};

// Offset-predicting deformable convolution.
struct FCMParams {
  ConvLayer offset_conv;  // 1x1 -> 18 channels: (dy, dx) for each of 9 bins
  ConvLayer deform;       // 3x3 kernel applied at the shifted bins
};

inline constexpr int kDeformBins = 9;
inline constexpr int kOffsetChannels = 2 * kDeformBins;

struct StageParams {
  std::optional<FCMParams> fcm;  // absent for stage 1 and when FCM is off
  HeadParams head;
};

struct CascadeParams {
  ModelConfig config;
  std::vector<ConvLayer> backbone;
  std::vector<StageParams> stages;

  // Every trainable tensor in a fixed order.
  std::vector<Parameter> parameters() const;
  std::size_t parameter_count() const;

  // Copy whose tensors are replaced, in parameters() order, by `vars`.
  CascadeParams rebind(std::span<const Var> vars) const;
};

// Seeded initialisation: He-normal for backbone, tower and deform kernels,
// N(0, 0.01) for the output convs, cls bias -log((1 - pi) / pi), zero offsets.
CascadeParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// x[C,H,W] -> relu(conv(x)) chain; returns one feature map per level in
// level_strides order.
std::vector<Var> backbone_forward(const Var& image, const CascadeParams& params);

// Deformable resampling of x[C,H,W]; output is [C,H,W].
Var fcm_forward(const Var& x, const FCMParams& p);

// Predicted sampling points [9*H*W, 2] (bin-major) for the deformable conv.
Var fcm_sampling_points(const Var& offsets);

struct HeadOutput {
  Var cls_logits;  // [H*W*A, num_classes], row ((r*W + c)*A + a)
  Var reg_deltas;  // [H*W*A, 4]
};

HeadOutput head_forward(const Var& x, const HeadParams& h,
                        int anchors_per_location, int num_classes);

struct StageOutput {
  Var cls_logits;                         // [N, num_classes]
  Var reg_deltas;                         // [N, 4], in units of delta_std
  std::vector<geometry::Box> input_boxes;  // b^{i-1}; anchors for stage 1
  std::vector<geometry::Box> refined_boxes;  // b^i
};

struct CascadeOutput {
  std::vector<StageOutput> stages;
};

struct ForwardOptions {
  // Clip every refined box to the image before it feeds the next stage.
  bool clip_refined_boxes = true;
  geometry::ImageSize image_size;
};

// Stage 1 runs the head on backbone features; stage i >= 2 first passes the
// previous stage's features through its FCM (when present) and decodes its
// deltas on top of the previous stage's boxes. Boxes carry no gradient.
CascadeOutput cascade_forward(const Var& image, const CascadeParams& params,
                              const geometry::AnchorGrid& anchors,
                              int num_stages, const ForwardOptions& options);

}  // namespace casdet::model
