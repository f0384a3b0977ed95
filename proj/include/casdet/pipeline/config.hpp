#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "casdet/assignment.hpp"
#include "casdet/geometry.hpp"
#include "casdet/losses.hpp"
#include "casdet/model.hpp"

namespace casdet::pipeline {

enum class EnsembleMode { kAverage, kLast };

struct InferenceConfig {
  double nms_threshold = 0.5;
  double score_threshold = 0.05;
  int top_k = 100;
  EnsembleMode ensemble_mode = EnsembleMode::kAverage;
  bool clip_refined_boxes = true;
};

struct SceneConfig {
  int image_size = 64;
  int num_classes = 3;  // 1..3 of {disk, square, triangle}
  int min_objects = 1;
  int max_objects = 4;
  double min_object_size = 10.0;
  double max_object_size = 30.0;
};

// Everything a run needs. Built from a flat `key = value` file; see
// configs/default.cfg for the full key list.
struct TrainConfig {
  std::uint64_t seed = 1;
  SceneConfig scene;
  int train_scenes = 1000;
  int val_scenes = 200;

  model::ModelConfig model;
  geometry::AnchorSpec anchors;
  std::vector<assignment::StageConfig> stages;
  losses::LossSettings loss;

  int epochs = 12;
  int batch_size = 8;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int warmup_iters = 100;
  std::vector<int> lr_steps;  // epochs (1-based) after which lr is multiplied by 0.1
  double grad_clip = 10.0;    // global gradient-norm cap; 0 disables
  bool hflip = false;         // random horizontal flips during training

  InferenceConfig inference;

  // Throws ConfigError on any inconsistency.
  void validate() const;

  geometry::ImageSize image_size() const {
    return {scene.image_size, scene.image_size};
  }
  int num_stages() const { return model.num_stages; }
};

// Defaults for stage i (0-based): t_fg = 0.5 + 0.1 i, t_bg = 0.4 for the first
// stage and t_fg - 0.1 after it, lambda = 2, alpha = 1.
assignment::StageConfig default_stage(int index);

TrainConfig default_config();

// Parses `key = value` lines ('#' starts a comment). Unknown or repeated keys
// are errors. Keys missing from the text keep their defaults.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const TrainConfig& cfg);

}  // namespace casdet::pipeline
