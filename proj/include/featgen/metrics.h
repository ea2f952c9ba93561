#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <vector>

#include "featgen/types.h"

namespace featgen {

// K x K pixel counts; rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  int64_t at(int gt, int pred) const { return counts_[static_cast<size_t>(gt) * k_ + pred]; }
  int64_t& at(int gt, int pred) { return counts_[static_cast<size_t>(gt) * k_ + pred]; }
  int64_t total() const;
  int64_t row_sum(int k) const;
  int64_t col_sum(int k) const;

  // Skips pixels whose ground truth is kIgnoreLabel.
  void accumulate(const LabelMask& pred, const LabelMask& gt);
  // Entrywise sum, used to reduce partial matrices.
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_;
  std::vector<int64_t> counts_;
};

ConfusionMatrix accumulate(ConfusionMatrix conf, const LabelMask& pred, const LabelMask& gt);

struct MetricBundle {
  double pixel_acc = 0.0;
  double class_acc = 0.0;
  double miou = 0.0;
  double fwiou = 0.0;
  // nullopt for classes with no ground-truth pixels.
  std::vector<std::optional<double>> per_class_acc;
  std::vector<std::optional<double>> per_class_iou;

  nlohmann::json to_json() const;
  static MetricBundle from_json(const nlohmann::json& j);
  bool operator==(const MetricBundle&) const = default;
};

MetricBundle compute_metrics(const ConfusionMatrix& conf);

}  // namespace featgen
