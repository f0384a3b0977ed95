#include "casdet/pipeline/scene.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "casdet/geometry.hpp"

namespace casdet::pipeline {

namespace {

constexpr int kPlacementTries = 100;
constexpr double kMaxPairIou = 0.3;
constexpr int kSupersample = 4;

struct PlacedShape {
  ShapeClass cls;
  geometry::Box box;
  double color[3];
};

bool covers(const PlacedShape& s, double px, double py) {
  const auto& b = s.box;
  if (px < b.x1 || px > b.x2 || py < b.y1 || py > b.y2) return false;
  switch (s.cls) {
    case kDisk: {
      const double r = 0.5 * b.width();
      const double dx = px - b.center_x();
      const double dy = py - b.center_y();
      return dx * dx + dy * dy <= r * r;
    }
    case kSquare:
      return true;
    case kTriangle: {
      // apex at top centre, base along the bottom edge
      const double t = (py - b.y1) / b.height();
      return std::abs(px - b.center_x()) <= 0.5 * b.width() * t;
    }
  }
  return false;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t z = base * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL +
                    index * 0x94D049BB133111EBULL + 0x2545F4914F6CDD1DULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SyntheticScene gen_scene(const SceneConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const int size = cfg.image_size;
  const double extent = static_cast<double>(size);
  const int count = std::uniform_int_distribution<int>(cfg.min_objects, cfg.max_objects)(rng);

  std::vector<PlacedShape> shapes;
  for (int n = 0; n < count; ++n) {
    const auto cls = static_cast<ShapeClass>(
        std::uniform_int_distribution<int>(0, cfg.num_classes - 1)(rng));
    for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
      const double w = uniform(cfg.min_object_size, cfg.max_object_size);
      double h = w;
      if (cls == kTriangle) {
        h = std::clamp(w * uniform(0.8, 1.25), cfg.min_object_size, cfg.max_object_size);
      }
      const double x1 = uniform(0.0, extent - w);
      const double y1 = uniform(0.0, extent - h);
      PlacedShape s{cls, {x1, y1, x1 + w, y1 + h}, {0, 0, 0}};
      bool ok = true;
      for (const auto& other : shapes) {
        if (geometry::iou(other.box, s.box) >= kMaxPairIou) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      for (double& c : s.color) c = uniform(0.45, 1.0);
      shapes.push_back(s);
      break;
    }
  }

  SyntheticScene scene;
  scene.seed = seed;
  scene.image = numerics::Tensor({3, static_cast<std::size_t>(size), static_cast<std::size_t>(size)});
  double base[3];
  for (double& b : base) b = uniform(0.0, 0.35);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  auto px = scene.image.data();
  for (int c = 0; c < 3; ++c) {
    std::fill(px.begin() + c * plane, px.begin() + (c + 1) * plane, base[c]);
  }
  for (const auto& s : shapes) {
    const int x0 = std::max(0, static_cast<int>(std::floor(s.box.x1)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(s.box.x2)));
    const int y0 = std::max(0, static_cast<int>(std::floor(s.box.y1)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(s.box.y2)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSupersample; ++sy) {
          for (int sx = 0; sx < kSupersample; ++sx) {
            const double qx = x + (sx + 0.5) / kSupersample;
            const double qy = y + (sy + 0.5) / kSupersample;
            hits += covers(s, qx, qy) ? 1 : 0;
          }
        }
        if (hits == 0) continue;
        const double a = static_cast<double>(hits) / (kSupersample * kSupersample);
        for (int c = 0; c < 3; ++c) {
          double& v = px[c * plane + static_cast<std::size_t>(y) * size + x];
          v = (1.0 - a) * v + a * s.color[c];
        }
      }
    }
    scene.gts.push_back({s.box, static_cast<int>(s.cls)});
  }
  for (double& v : px) v = std::clamp(v + uniform(-0.08, 0.08), 0.0, 1.0);
  return scene;
}

SyntheticScene hflip(const SyntheticScene& scene) {
  SyntheticScene out = scene;
  const std::size_t c = scene.image.dim(0);
  const std::size_t h = scene.image.dim(1);
  const std::size_t w = scene.image.dim(2);
  auto src = scene.image.data();
  auto dst = out.image.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        dst[(ch * h + y) * w + x] = src[(ch * h + y) * w + (w - 1 - x)];
      }
    }
  }
  const double width = static_cast<double>(w);
  for (auto& g : out.gts) {
    g.box = {width - g.box.x2, g.box.y1, width - g.box.x1, g.box.y2};
  }
  return out;
}

std::vector<SyntheticScene> make_scenes(const SceneConfig& cfg, std::uint64_t base_seed,
                                        std::uint64_t stream, int count) {
  std::vector<SyntheticScene> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(gen_scene(cfg, derive_seed(base_seed, stream, static_cast<std::uint64_t>(i))));
  }
  return out;
}

}  // namespace casdet::pipeline
