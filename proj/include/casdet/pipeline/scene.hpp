#pragma once

#include <cstdint>
#include <vector>

#include "casdet/assignment.hpp"
#include "casdet/numerics/tensor.hpp"
#include "casdet/pipeline/config.hpp"

namespace casdet::pipeline {

enum ShapeClass : int { kDisk = 0, kSquare = 1, kTriangle = 2 };

struct SyntheticScene {
  numerics::Tensor image;  // [3,H,W], values in [0,1]
  std::vector<assignment::GroundTruth> gts;
  std::uint64_t seed = 0;
};

// Deterministic in `seed`. Places 1..max_objects shapes with pairwise gt IoU
// below 0.3 on a noisy background; a shape that cannot be placed within 100
// tries is dropped.
SyntheticScene gen_scene(const SceneConfig& cfg, std::uint64_t seed);

// Mirrors the image and boxes left to right.
SyntheticScene hflip(const SyntheticScene& scene);

// Mixes a base seed with a stream tag and an index (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

inline constexpr std::uint64_t kTrainStream = 1;
inline constexpr std::uint64_t kValStream = 2;
inline constexpr std::uint64_t kInitStream = 3;
inline constexpr std::uint64_t kShuffleStream = 4;

std::vector<SyntheticScene> make_scenes(const SceneConfig& cfg, std::uint64_t base_seed,
                                        std::uint64_t stream, int count);

}  // namespace casdet::pipeline
