#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featgen/tensor.h"

namespace featgen {

inline constexpr uint8_t kIgnoreLabel = 255;

// Integer class map over a pixel grid. Values are in [0, num_classes) or kIgnoreLabel.
class LabelMask {
 public:
  LabelMask() = default;
  LabelMask(int height, int width, int num_classes, uint8_t fill = 0);

  int height() const { return h_; }
  int width() const { return w_; }
  int num_classes() const { return k_; }
  size_t size() const { return labels_.size(); }

  uint8_t at(int y, int x) const { return labels_[static_cast<size_t>(y) * w_ + x]; }
  uint8_t& at(int y, int x) { return labels_[static_cast<size_t>(y) * w_ + x]; }
  const std::vector<uint8_t>& labels() const { return labels_; }
  std::vector<uint8_t>& labels() { return labels_; }

  // Throws RangeError on any value that is neither a class id nor kIgnoreLabel.
  void validate() const;
  bool same_shape(const LabelMask& o) const { return h_ == o.h_ && w_ == o.w_; }
  bool operator==(const LabelMask& o) const = default;

  // K x H x W one-hot encoding; ignored pixels are all-zero.
  Tensor one_hot() const;
  LabelMask hflip() const;
  LabelMask crop(int y0, int x0, int height, int width) const;
  // Majority vote inside each factor x factor cell, ties to the lower class
  // id; cells with no valid pixel become kIgnoreLabel.
  LabelMask downsample_majority(int factor) const;

 private:
  int h_ = 0;
  int w_ = 0;
  int k_ = 0;
  std::vector<uint8_t> labels_;
};

// 3 x H x W image with values in [0, 1].
struct ImageTensor {
  Tensor data;

  ImageTensor() = default;
  explicit ImageTensor(Tensor t) : data(std::move(t)) {}
  int height() const { return data.h; }
  int width() const { return data.w; }
  void validate() const;
};

// C x h x w activation map at encoder stride `stride`.
struct FeatureTensor {
  Tensor data;
  int stride = 1;
  std::string stage_tag = "cut";
};

// K x H x W unnormalized class scores.
struct LogitMap {
  Tensor data;
  int num_classes() const { return data.c; }
};

// Per-pixel softmax over the class axis, stabilized by max subtraction.
Tensor softmax_probs(const LogitMap& logits);
// Per-pixel argmax, ties to the lower class index.
LabelMask argmax_labels(const Tensor& scores);

}  // namespace featgen
