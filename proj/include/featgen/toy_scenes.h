#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "featgen/types.h"

namespace featgen {

enum class ShapeKind { kRectangle, kEllipse, kBar };

// Procedural (image, mask) scenes. Class 0 is background; classes
// 1..K-1 are drawn as objects with probabilities `object_class_weights`.
struct SceneConfig {
  int height = 64;
  int width = 64;
  int num_classes = 5;
  int min_objects = 1;
  int max_objects = 4;
  // Relative draw weights for classes 1..K-1 (size K-1). The last class is the rare one.
  std::vector<double> object_class_weights = {0.37, 0.29, 0.24, 0.10};
  std::vector<ShapeKind> shapes = {ShapeKind::kRectangle, ShapeKind::kEllipse, ShapeKind::kBar};
  double noise_sigma = 0.05;
  double texture_amplitude = 0.08;
  uint64_t seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static SceneConfig from_json(const nlohmann::json& j);

  // Base color of a class; class 0 is gray, others have distinct hues.
  std::array<double, 3> class_color(int k) const;
  // Stripe frequency (cycles per image width) of a class texture.
  double texture_frequency(int k) const;
};

struct Scene {
  ImageTensor image;
  LabelMask mask;
  std::vector<int> object_classes;  // class of each drawn object, in paint order
};

// Deterministic per (config.seed, index).
Scene generate_scene(const SceneConfig& config, uint64_t index);

struct SplitSizes {
  int train = 500;
  int val = 100;
  int extra = 0;  // unseen scenes for the additional-mask and pseudo-GT sources
};

// Writes <out>/{train,val,extra}/{images/NNNNN.ppm, masks/NNNNN.pgm} and
// <out>/manifest.json. Index ranges: train [0, n_train), val
// [n_train, n_train + n_val), extra after that. Returns the manifest.
nlohmann::json build_split(const SceneConfig& config, const SplitSizes& sizes, const std::filesystem::path& out);

struct Sample {
  ImageTensor image;
  LabelMask mask;
  std::string name;
};

// Loads <split_dir>/images/*.ppm paired with <split_dir>/masks/*.pgm by file stem, sorted by name.
std::vector<Sample> load_split(const std::filesystem::path& split_dir, int num_classes);

}  // namespace featgen
