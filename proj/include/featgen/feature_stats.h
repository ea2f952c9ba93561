#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "featgen/metrics.h"
#include "featgen/seg_model.h"
#include "featgen/types.h"

namespace featgen {

// Rescales the patch to L2 norm `radius`. Throws RangeError on a zero patch.
FeatureTensor normalize_to_ball(const FeatureTensor& patch, double radius);

// Activation histograms per (class, channel). Each channel has its own
// uniform binning over the range observed across all classes, so histograms
// of different classes in one channel are comparable.
struct FeatureHistogram {
  int num_classes = 0;
  int channels = 0;
  int bins = 0;
  std::vector<double> lo, hi;   // per channel
  std::vector<int64_t> counts;  // [class][channel][bin]

  std::span<const int64_t> cell(int k, int c) const {
    return {counts.data() + (static_cast<size_t>(k) * channels + c) * bins, static_cast<size_t>(bins)};
  }
  int64_t cell_total(int k, int c) const;
};

// Normalizes each feature to the ball, downsamples each mask to feature
// resolution by majority vote (unless it already matches), and bins every
// activation by the class at its position. Ignored positions are skipped.
FeatureHistogram build_histograms(std::span<const FeatureTensor> features, std::span<const LabelMask> masks,
                                  int bins = 64, double radius = 100.0);

struct EntropyTable {
  int num_classes = 0;
  int channels = 0;
  std::vector<std::optional<double>> entropy;  // [class][channel], bits; nullopt for empty cells
  double mean = 0.0;                           // over non-empty cells
};

// Base-2 entropy of each non-empty (class, channel) histogram. Throws
// RangeError when every cell is empty.
EntropyTable class_channel_entropy(const FeatureHistogram& hist);
EntropyTable class_channel_entropy(std::span<const FeatureTensor> features, std::span<const LabelMask> masks,
                                   int bins = 64, double radius = 100.0);

// sum_b min(a_b, b_b) / sum_b max(a_b, b_b) after normalizing each to unit mass.
double hist_iou(std::span<const double> a, std::span<const double> b);
double hist_iou(std::span<const int64_t> a, std::span<const int64_t> b);

// Average over unordered pairs of non-empty classes within a channel, then
// over channels that have at least one pair.
double mean_hist_iou(const FeatureHistogram& hist);

// Decodes each feature with the frozen model and scores it against its mask.
MetricBundle frozen_head_score(std::span<const FeatureTensor> features, std::span<const LabelMask> masks,
                               const SegModel& model);

struct StageStats {
  std::string stage_tag;
  double mean_entropy = 0.0;
  double mean_hist_iou = 0.0;
  MetricBundle frozen_head;

  nlohmann::json to_json() const;
};

StageStats stage_stats(const std::string& tag, std::span<const FeatureTensor> features,
                       std::span<const LabelMask> masks, const SegModel& model, int bins = 64,
                       double radius = 100.0);

// Writes <prefix>_real_c<N>.ppm and <prefix>_fake<i>_c<N>.ppm (h x w,
// grayscale over the channel's shared range) for every requested channel,
// plus <prefix>_diff<i>.ppm (H x W): cyan where only the fake's decoded
// prediction is correct, red where only the real one is, black elsewhere.
// Returns the written paths.
std::vector<std::filesystem::path> render_feature_maps(const FeatureTensor& real, std::span<const FeatureTensor> fakes,
                                                       std::span<const int> channels, const LabelMask& gt,
                                                       const SegModel& model, const std::filesystem::path& out_dir,
                                                       const std::string& prefix = "feature");

}  // namespace featgen
