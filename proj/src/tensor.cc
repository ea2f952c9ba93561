#include "featgen/tensor.h"

#include <algorithm>
#include <cmath>

#include "featgen/errors.h"

namespace featgen {

std::string Tensor::shape_str() const {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const int h = parts[0]->h, w = parts[0]->w;
  int c = 0;
  for (const Tensor* p : parts) {
    if (p->h != h || p->w != w) throw ShapeError("concat_channels: spatial mismatch " + p->shape_str());
    c += p->c;
  }
  Tensor out(c, h, w);
  auto it = out.data.begin();
  for (const Tensor* p : parts) it = std::copy(p->data.begin(), p->data.end(), it);
  return out;
}

std::vector<Tensor> split_channels(const Tensor& t, std::span<const int> widths) {
  std::vector<Tensor> out;
  out.reserve(widths.size());
  size_t offset = 0;
  for (int cw : widths) {
    Tensor part(cw, t.h, t.w);
    if (offset + part.size() > t.size()) throw ShapeError("split_channels: widths exceed tensor");
    std::copy_n(t.data.begin() + offset, part.size(), part.data.begin());
    offset += part.size();
    out.push_back(std::move(part));
  }
  if (offset != t.size()) throw ShapeError("split_channels: widths do not cover tensor");
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) throw ShapeError("add_inplace: " + dst.shape_str() + " vs " + src.shape_str());
  for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

void scale_inplace(Tensor& t, double s) {
  for (double& v : t.data) v *= s;
}

double l2_norm(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data) acc += v * v;
  return std::sqrt(acc);
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](double v) { return std::isfinite(v); });
}

Tensor hflip(const Tensor& t) {
  Tensor out(t.c, t.h, t.w);
  for (int ch = 0; ch < t.c; ++ch)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x) out.at(ch, y, x) = t.at(ch, y, t.w - 1 - x);
  return out;
}

}  // namespace featgen
