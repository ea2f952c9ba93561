#pragma once

#include <filesystem>
#include <json.hpp>
#include <random>
#include <string>
#include <vector>

#include "featgen/types.h"

namespace featgen {

// Read-only list of layout masks.
class MaskProvider {
 public:
  MaskProvider() = default;
  MaskProvider(std::string name, std::vector<LabelMask> masks);

  const std::string& name() const { return name_; }
  size_t size() const { return masks_.size(); }
  bool empty() const { return masks_.empty(); }
  const LabelMask& operator[](size_t i) const { return masks_[i]; }
  const std::vector<LabelMask>& masks() const { return masks_; }

 private:
  std::string name_;
  std::vector<LabelMask> masks_;
};

struct IngestReport {
  size_t accepted = 0;
  struct Rejection {
    std::string file;
    std::string reason;
  };
  std::vector<Rejection> rejected;

  nlohmann::json to_json() const;
};

// Loads every *.pgm in `dir` (sorted by name). Unreadable files and masks
// with labels outside [0, K) u {255} are skipped and listed in `report`.
// Throws MissingArtifactError when the directory does not exist.
MaskProvider ingest_mask_dir(const std::filesystem::path& dir, int num_classes, IngestReport* report = nullptr);

struct WeightedProvider {
  MaskProvider provider;
  double weight = 1.0;
};

struct MaskSourceConfig {
  MaskProvider primary;
  std::vector<WeightedProvider> additional;
  // Per sampled batch, primary : additional = primary_parts : additional_parts.
  int primary_parts = 3;
  int additional_parts = 1;
  int crop_height = 64;
  int crop_width = 64;

  void validate() const;
  bool has_additional() const;
};

struct SampledMask {
  LabelMask mask;
  int source = 0;  // 0 = primary, i + 1 = additional[i]
};

// Number of additional-source masks in a batch of `count`: the additional
// share rounded down, so rounding always favors the primary source.
int additional_count(const MaskSourceConfig& config, int count);

// Returns `count` random crops, primary first. Throws EmptySourceError if a
// source needed for the batch has no masks.
std::vector<SampledMask> sample_masks(const MaskSourceConfig& config, int count, std::mt19937_64& rng);

struct PseudoGtParams {
  double threshold = 0.7;

  void validate() const;
};

// Argmax where the max posterior exceeds the threshold; every other pixel
// takes the label of the nearest confident pixel (Euclidean, ties to the
// first in row-major order). Throws NoConfidentPixelError if nothing is
// confident.
LabelMask pseudo_gt(const Tensor& probs, const PseudoGtParams& params);

}  // namespace featgen
