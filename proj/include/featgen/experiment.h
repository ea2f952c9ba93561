#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "featgen/feature_gan.h"
#include "featgen/seg_model.h"
#include "featgen/toy_scenes.h"
#include "featgen/training.h"

namespace featgen {

struct AdditionalSourceSpec {
  std::string name;
  std::string split;  // dataset split whose masks are used, or
  std::string dir;    // a mask directory (relative paths resolve against the run directory)
  double weight = 1.0;
};

struct MaskSourceSpec {
  std::vector<AdditionalSourceSpec> additional;
  int primary_parts = 3;
  int additional_parts = 1;
  int crop = 64;
};

struct EvalSpec {
  std::string split = "val";
  int stats_samples = 64;       // patches for the feature statistics
  int latent_samples = 16;      // z draws for the multimodality check
  std::vector<int> render_channels = {0, 1, 2, 3};
  double pseudo_gt_threshold = 0.7;
  std::string pseudo_gt_split = "extra";
};

// Full description of one run. Per-module seeds are derived from `seed`.
struct ExperimentConfig {
  uint64_t seed = 2024;
  SceneConfig dataset;
  SplitSizes splits{500, 100, 200};
  SegModelConfig model;
  GeneratorConfig generator;
  GanTrainConfig generator_training;
  int pool_size = 2000;
  TrainConfig baseline;
  TrainConfig augmented;
  bool augmented_from_scratch = false;
  MaskSourceSpec mask_sources;
  EvalSpec eval;

  ExperimentConfig();
  // Re-derives every per-module seed from `seed` and copies shared sizes
  // (classes, channels, stride) into the sub-configs.
  void resolve();
  void validate() const;
  nlohmann::json to_json() const;
};

uint64_t derive_seed(uint64_t seed, std::string_view purpose);

// Parses a config document. Unknown keys and wrongly typed values raise
// ConfigError; absent keys keep their defaults. The result is resolved.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& resolved);

}  // namespace featgen
