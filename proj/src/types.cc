#include "featgen/types.h"

#include <algorithm>
#include <cmath>

#include "featgen/errors.h"

namespace featgen {

LabelMask::LabelMask(int height, int width, int num_classes, uint8_t fill)
    : h_(height), w_(width), k_(num_classes), labels_(static_cast<size_t>(height) * width, fill) {
  if (num_classes < 2 || num_classes >= kIgnoreLabel)
    throw RangeError("LabelMask: num_classes must be in [2, 254], got " + std::to_string(num_classes));
}

void LabelMask::validate() const {
  for (size_t i = 0; i < labels_.size(); ++i) {
    const uint8_t v = labels_[i];
    if (v != kIgnoreLabel && v >= k_)
      throw RangeError("label " + std::to_string(v) + " at pixel " + std::to_string(i) + " exceeds K=" +
                       std::to_string(k_));
  }
}

Tensor LabelMask::one_hot() const {
  Tensor t(k_, h_, w_);
  for (int y = 0; y < h_; ++y)
    for (int x = 0; x < w_; ++x) {
      const uint8_t v = at(y, x);
      if (v != kIgnoreLabel) t.at(v, y, x) = 1.0;
    }
  return t;
}

LabelMask LabelMask::hflip() const {
  LabelMask out(h_, w_, k_);
  for (int y = 0; y < h_; ++y)
    for (int x = 0; x < w_; ++x) out.at(y, x) = at(y, w_ - 1 - x);
  return out;
}

LabelMask LabelMask::crop(int y0, int x0, int height, int width) const {
  if (y0 < 0 || x0 < 0 || y0 + height > h_ || x0 + width > w_)
    throw ShapeError("LabelMask::crop: window outside mask");
  LabelMask out(height, width, k_);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.at(y, x) = at(y0 + y, x0 + x);
  return out;
}

LabelMask LabelMask::downsample_majority(int factor) const {
  if (factor <= 0 || h_ % factor != 0 || w_ % factor != 0)
    throw ShapeError("downsample_majority: factor " + std::to_string(factor) + " does not divide mask");
  LabelMask out(h_ / factor, w_ / factor, k_);
  std::vector<int> votes(k_);
  for (int oy = 0; oy < out.h_; ++oy)
    for (int ox = 0; ox < out.w_; ++ox) {
      std::fill(votes.begin(), votes.end(), 0);
      for (int y = oy * factor; y < (oy + 1) * factor; ++y)
        for (int x = ox * factor; x < (ox + 1) * factor; ++x) {
          const uint8_t v = at(y, x);
          if (v != kIgnoreLabel) ++votes[v];
        }
      const auto best = std::max_element(votes.begin(), votes.end());
      out.at(oy, ox) = *best == 0 ? kIgnoreLabel : static_cast<uint8_t>(best - votes.begin());
    }
  return out;
}

void ImageTensor::validate() const {
  if (data.c != 3) throw ShapeError("image must have 3 channels, got " + data.shape_str());
  if (!all_finite(data)) throw RangeError("image contains non-finite values");
}

Tensor softmax_probs(const LogitMap& logits) {
  const Tensor& s = logits.data;
  Tensor p(s.c, s.h, s.w);
  const size_t plane = s.plane();
  for (size_t i = 0; i < plane; ++i) {
    double m = s.data[i];
    for (int k = 1; k < s.c; ++k) m = std::max(m, s.data[k * plane + i]);
    double z = 0.0;
    for (int k = 0; k < s.c; ++k) {
      const double e = std::exp(s.data[k * plane + i] - m);
      p.data[k * plane + i] = e;
      z += e;
    }
    for (int k = 0; k < s.c; ++k) p.data[k * plane + i] /= z;
  }
  return p;
}

LabelMask argmax_labels(const Tensor& scores) {
  LabelMask out(scores.h, scores.w, scores.c);
  const size_t plane = scores.plane();
  for (size_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int k = 1; k < scores.c; ++k)
      if (scores.data[k * plane + i] > scores.data[best * plane + i]) best = k;
    out.labels()[i] = static_cast<uint8_t>(best);
  }
  return out;
}

}  // namespace featgen
