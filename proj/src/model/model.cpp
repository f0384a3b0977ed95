#include "casdet/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "casdet/error.hpp"
#include "casdet/numerics/ops.hpp"

namespace casdet::model {

using numerics::Shape;
using numerics::Tensor;

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (head_depth < 0) throw ConfigError("head_depth must be >= 0");
  if (num_stages < 1 || num_stages > 3) {
    throw ConfigError("num_stages must be 1, 2 or 3, got " + std::to_string(num_stages));
  }
  if (anchors_per_location < 1) throw ConfigError("anchors_per_location must be >= 1");
  if (level_strides.empty()) throw ConfigError("at least one feature level is required");
  int prev = 0;
  for (int s : level_strides) {
    if (s < 2 || (s & (s - 1)) != 0) {
      throw ConfigError("level stride " + std::to_string(s) + " is not a power of two >= 2");
    }
    if (s <= prev) throw ConfigError("level strides must be increasing");
    prev = s;
  }
  if (!(prior_pi > 0.0 && prior_pi < 1.0)) throw ConfigError("prior_pi must lie in (0,1)");
  if (!delta_std.empty() && delta_std.size() != static_cast<std::size_t>(num_stages)) {
    throw ConfigError("delta_std has " + std::to_string(delta_std.size()) + " entries for " +
                      std::to_string(num_stages) + " stages");
  }
  for (const auto& d : delta_std) {
    for (double v : d) {
      if (!(v > 0.0 && std::isfinite(v))) throw ConfigError("delta_std values must be > 0");
    }
  }
}

geometry::Deltas ModelConfig::stage_delta_std(int stage) const {
  if (delta_std.empty()) return {1.0, 1.0, 1.0, 1.0};
  return delta_std.at(static_cast<std::size_t>(stage));
}

int ModelConfig::backbone_depth() const {
  int depth = 0;
  for (int s = level_strides.back(); s > 1; s >>= 1) ++depth;
  return depth;
}

std::vector<Parameter> CascadeParams::parameters() const {
  std::vector<Parameter> out;
  auto add = [&out](const ConvLayer& c) {
    out.push_back(c.weight);
    out.push_back(c.bias);
  };
  for (const auto& c : backbone) add(c);
  for (const auto& s : stages) {
    if (s.fcm) {
      add(s.fcm->offset_conv);
      add(s.fcm->deform);
    }
    for (const auto& c : s.head.tower) add(c);
    add(s.head.cls_out);
    add(s.head.reg_out);
  }
  return out;
}

std::size_t CascadeParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.var.value().numel();
  return n;
}

CascadeParams CascadeParams::rebind(std::span<const Var> vars) const {
  CascadeParams out = *this;
  std::size_t next = 0;
  auto take = [&](Parameter& p) {
    if (next >= vars.size()) throw DimensionError("rebind: too few tensors");
    if (vars[next].shape() != p.var.shape()) {
      throw DimensionError("rebind: '" + p.name + "' expects shape " +
                           numerics::shape_to_string(p.var.shape()) + ", got " +
                           numerics::shape_to_string(vars[next].shape()));
    }
    p.var = vars[next++];
  };
  auto conv = [&](ConvLayer& c) {
    take(c.weight);
    take(c.bias);
  };
  for (auto& c : out.backbone) conv(c);
  for (auto& s : out.stages) {
    if (s.fcm) {
      conv(s.fcm->offset_conv);
      conv(s.fcm->deform);
    }
    for (auto& c : s.head.tower) conv(c);
    conv(s.head.cls_out);
    conv(s.head.reg_out);
  }
  if (next != vars.size()) throw DimensionError("rebind: too many tensors");
  return out;
}

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(Shape shape, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data()) v = dist(rng_);
    return t;
  }

  ConvLayer conv(const std::string& name, int cout, int cin, int k, double stddev,
                 double bias = 0.0) {
    const Shape wshape{static_cast<std::size_t>(cout), static_cast<std::size_t>(cin),
                       static_cast<std::size_t>(k), static_cast<std::size_t>(k)};
    Tensor w = stddev > 0.0 ? normal(wshape, stddev) : Tensor(wshape);
    return ConvLayer{numerics::make_parameter(name + ".weight", std::move(w)),
                     numerics::make_parameter(
                         name + ".bias", Tensor({static_cast<std::size_t>(cout)}, bias))};
  }

  ConvLayer he_conv(const std::string& name, int cout, int cin, int k) {
    return conv(name, cout, cin, k, std::sqrt(2.0 / (cin * k * k)));
  }

 private:
  std::mt19937_64 rng_;
};

Var conv(const Var& x, const ConvLayer& c, int stride, int padding) {
  return numerics::conv2d(x, c.weight.var, c.bias.var, stride, padding);
}

// [A*D, H, W] -> [H*W*A, D]
Var to_box_layout(const Var& x, int anchors, int per_anchor) {
  const std::size_t h = x.shape()[1];
  const std::size_t w = x.shape()[2];
  const std::size_t a = static_cast<std::size_t>(anchors);
  const std::size_t d = static_cast<std::size_t>(per_anchor);
  Var r = numerics::reshape(x, {a, d, h * w});
  Var p = numerics::permute(r, {2, 0, 1});
  return numerics::reshape(p, {h * w * a, d});
}

}  // namespace

CascadeParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Initializer init(seed);
  CascadeParams params;
  params.config = cfg;
  const int c = cfg.channels;
  for (int i = 0; i < cfg.backbone_depth(); ++i) {
    params.backbone.push_back(init.he_conv("backbone.conv" + std::to_string(i + 1), c,
                                           i == 0 ? cfg.in_channels : c, 3));
  }
  const double prior_bias = -std::log((1.0 - cfg.prior_pi) / cfg.prior_pi);
  for (int s = 0; s < cfg.num_stages; ++s) {
    const std::string prefix = "stage" + std::to_string(s + 1);
    StageParams stage;
    if (s > 0 && cfg.use_fcm) {
      FCMParams fcm;
      fcm.offset_conv = init.conv(prefix + ".fcm.offset_conv", kOffsetChannels, c, 1, 0.0);
      fcm.deform = init.he_conv(prefix + ".fcm.deform", c, c, 3);
      stage.fcm = std::move(fcm);
    }
    for (int t = 0; t < cfg.head_depth; ++t) {
      stage.head.tower.push_back(
          init.he_conv(prefix + ".head.tower" + std::to_string(t + 1), c, c, 3));
    }
    stage.head.cls_out = init.conv(prefix + ".head.cls_out",
                                   cfg.anchors_per_location * cfg.num_classes, c, 3,
                                   0.01, prior_bias);
    stage.head.reg_out =
        init.conv(prefix + ".head.reg_out", cfg.anchors_per_location * 4, c, 3, 0.01);
    params.stages.push_back(std::move(stage));
  }
  return params;
}

std::vector<Var> backbone_forward(const Var& image, const CascadeParams& params) {
  const auto& cfg = params.config;
  if (image.shape().size() != 3 ||
      image.shape()[0] != static_cast<std::size_t>(cfg.in_channels)) {
    throw DimensionError("image must be [" + std::to_string(cfg.in_channels) +
                         ",H,W], got " + numerics::shape_to_string(image.shape()));
  }
  std::vector<Var> levels;
  Var x = image;
  int stride = 1;
  std::size_t next_level = 0;
  for (const ConvLayer& layer : params.backbone) {
    x = numerics::relu(conv(x, layer, 2, 1));
    stride *= 2;
    if (next_level < cfg.level_strides.size() && cfg.level_strides[next_level] == stride) {
      levels.push_back(x);
      ++next_level;
    }
  }
  if (levels.size() != cfg.level_strides.size()) {
    throw DimensionError("backbone produced " + std::to_string(levels.size()) +
                         " feature levels, expected " +
                         std::to_string(cfg.level_strides.size()));
  }
  return levels;
}

Var fcm_sampling_points(const Var& offsets) {
  const auto& s = offsets.shape();
  if (s.size() != 3 || s[0] != static_cast<std::size_t>(kOffsetChannels)) {
    throw DimensionError("FCM offsets must be [18,H,W], got " +
                         numerics::shape_to_string(s));
  }
  const std::size_t h = s[1];
  const std::size_t w = s[2];
  const std::size_t hw = h * w;
  Var r = numerics::reshape(offsets, {kDeformBins, 2, hw});
  Var p = numerics::permute(r, {0, 2, 1});
  Var shifts = numerics::reshape(p, {kDeformBins * hw, 2});
  Tensor base({kDeformBins * hw, 2});
  for (int bin = 0; bin < kDeformBins; ++bin) {
    const int ky = bin / 3 - 1;
    const int kx = bin % 3 - 1;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t row = bin * hw + y * w + x;
        base[2 * row] = static_cast<double>(y) + ky;
        base[2 * row + 1] = static_cast<double>(x) + kx;
      }
    }
  }
  return numerics::add(Var::constant(std::move(base)), shifts);
}

Var fcm_forward(const Var& x, const FCMParams& p) {
  const auto& s = x.shape();
  if (s.size() != 3) {
    throw DimensionError("FCM input must be [C,H,W], got " + numerics::shape_to_string(s));
  }
  const std::size_t c = s[0];
  const std::size_t h = s[1];
  const std::size_t w = s[2];
  const auto& ks = p.deform.weight.var.shape();
  if (ks.size() != 4 || ks[1] != c || ks[2] != 3 || ks[3] != 3) {
    throw DimensionError("FCM deform kernel must be [C',C,3,3] with C=" +
                         std::to_string(c) + ", got " + numerics::shape_to_string(ks));
  }
  const std::size_t cout = ks[0];
  Var offsets = conv(x, p.offset_conv, 1, 0);
  Var points = fcm_sampling_points(offsets);
  Var sampled = numerics::bilinear_sample(x, points);  // [C, 9*H*W]
  Var columns = numerics::reshape(sampled, {c * kDeformBins, h * w});
  Var kernel = numerics::reshape(p.deform.weight.var, {cout, c * kDeformBins});
  Var out = numerics::add_bias(numerics::matmul(kernel, columns), p.deform.bias.var);
  return numerics::reshape(out, {cout, h, w});
}

HeadOutput head_forward(const Var& x, const HeadParams& h, int anchors_per_location,
                        int num_classes) {
  Var t = x;
  for (const ConvLayer& layer : h.tower) t = numerics::relu(conv(t, layer, 1, 1));
  Var cls = conv(t, h.cls_out, 1, 1);
  Var reg = conv(t, h.reg_out, 1, 1);
  const auto expect = [](const Var& v, int channels, const char* what) {
    if (v.shape()[0] != static_cast<std::size_t>(channels)) {
      throw DimensionError(std::string(what) + " produces " +
                           std::to_string(v.shape()[0]) + " channels, expected " +
                           std::to_string(channels));
    }
  };
  expect(cls, anchors_per_location * num_classes, "cls_out");
  expect(reg, anchors_per_location * 4, "reg_out");
  return {to_box_layout(cls, anchors_per_location, num_classes),
          to_box_layout(reg, anchors_per_location, 4)};
}

CascadeOutput cascade_forward(const Var& image, const CascadeParams& params,
                              const geometry::AnchorGrid& anchors, int num_stages,
                              const ForwardOptions& options) {
  const auto& cfg = params.config;
  if (num_stages < 1 || num_stages > static_cast<int>(params.stages.size())) {
    throw ConfigError("cascade_forward asked for " + std::to_string(num_stages) +
                      " stages but the model has " + std::to_string(params.stages.size()));
  }
  if (anchors.levels.size() != cfg.level_strides.size()) {
    throw DimensionError("anchor grid has " + std::to_string(anchors.levels.size()) +
                         " levels, model has " + std::to_string(cfg.level_strides.size()));
  }
  std::vector<Var> features = backbone_forward(image, params);
  for (std::size_t l = 0; l < features.size(); ++l) {
    const auto& lv = anchors.levels[l];
    if (features[l].shape()[1] != static_cast<std::size_t>(lv.height) ||
        features[l].shape()[2] != static_cast<std::size_t>(lv.width)) {
      throw DimensionError("feature level " + std::to_string(l) + " is " +
                           numerics::shape_to_string(features[l].shape()) +
                           " but anchors expect " + std::to_string(lv.height) + "x" +
                           std::to_string(lv.width));
    }
  }
  if (anchors.spec.anchors_per_location() != cfg.anchors_per_location) {
    throw ConfigError("anchor spec yields " +
                      std::to_string(anchors.spec.anchors_per_location()) +
                      " anchors per location, model expects " +
                      std::to_string(cfg.anchors_per_location));
  }

  CascadeOutput out;
  std::vector<geometry::Box> boxes = anchors.boxes;
  for (int i = 0; i < num_stages; ++i) {
    const StageParams& stage = params.stages[i];
    if (stage.fcm) {
      for (Var& f : features) f = fcm_forward(f, *stage.fcm);
    }
    std::vector<Var> cls_parts;
    std::vector<Var> reg_parts;
    for (const Var& f : features) {
      HeadOutput ho = head_forward(f, stage.head, cfg.anchors_per_location, cfg.num_classes);
      cls_parts.push_back(ho.cls_logits);
      reg_parts.push_back(ho.reg_deltas);
    }
    StageOutput so;
    so.cls_logits = cls_parts.size() == 1 ? cls_parts[0] : numerics::concat_rows(cls_parts);
    so.reg_deltas = reg_parts.size() == 1 ? reg_parts[0] : numerics::concat_rows(reg_parts);
    if (so.reg_deltas.shape()[0] != boxes.size()) {
      throw DimensionError("stage " + std::to_string(i + 1) + " predicts " +
                           std::to_string(so.reg_deltas.shape()[0]) + " boxes for " +
                           std::to_string(boxes.size()) + " anchors");
    }
    so.input_boxes = boxes;
    so.refined_boxes.reserve(boxes.size());
    auto d = so.reg_deltas.value().data();
    std::optional<geometry::ImageSize> clip;
    if (options.clip_refined_boxes) clip = options.image_size;
    const geometry::Deltas sd = cfg.stage_delta_std(i);
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      so.refined_boxes.push_back(geometry::decode_deltas(
          boxes[k],
          {d[4 * k] * sd[0], d[4 * k + 1] * sd[1], d[4 * k + 2] * sd[2], d[4 * k + 3] * sd[3]},
          clip));
    }
    boxes = so.refined_boxes;
    out.stages.push_back(std::move(so));
  }
  return out;
}

}  // namespace casdet::model
