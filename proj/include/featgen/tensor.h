#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace featgen {

// Dense channel-major (C x H x W) activation map for a single sample.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c(channels), h(height), w(width),
        data(static_cast<size_t>(channels) * height * width, fill) {}

  size_t size() const { return data.size(); }
  size_t plane() const { return static_cast<size_t>(h) * w; }
  bool empty() const { return data.empty(); }

  double& at(int ch, int y, int x) { return data[(static_cast<size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return data[(static_cast<size_t>(ch) * h + y) * w + x]; }

  std::span<double> channel(int ch) { return {data.data() + ch * plane(), plane()}; }
  std::span<const double> channel(int ch) const { return {data.data() + ch * plane(), plane()}; }

  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
  std::string shape_str() const;
};

// Concatenates along the channel axis; all inputs must share h and w.
Tensor concat_channels(std::span<const Tensor* const> parts);
// Inverse of concat_channels for gradients: splits `t` into chunks of the given widths.
std::vector<Tensor> split_channels(const Tensor& t, std::span<const int> widths);

void add_inplace(Tensor& dst, const Tensor& src);
void scale_inplace(Tensor& t, double s);
double l2_norm(const Tensor& t);
bool all_finite(const Tensor& t);
Tensor hflip(const Tensor& t);

}  // namespace featgen
