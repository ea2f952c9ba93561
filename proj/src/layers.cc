#include "featgen/layers.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "featgen/errors.h"

namespace featgen {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// dst (+)= lhs * rhs. Eigen's packed GEMM does not depend on where the
// operands live in memory, but its matrix-vector and small coefficient-wise
// paths peel to an aligned address, so their rounding would vary between
// calls. Those shapes take a fixed-order loop instead.
template <class Dst, class Lhs, class Rhs>
void product(Dst&& dst, const Lhs& lhs, const Rhs& rhs, bool accumulate) {
  const Eigen::Index m = lhs.rows(), n = rhs.cols(), depth = lhs.cols();
  if (m > 1 && n > 1 && m + n + depth >= 24) {
    if (accumulate)
      dst.noalias() += lhs * rhs;
    else
      dst.noalias() = lhs * rhs;
    return;
  }
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < depth; ++k) acc += lhs(i, k) * rhs(k, j);
      dst(i, j) = accumulate ? dst(i, j) + acc : acc;
    }
}

struct ConvGeometry {
  int in_h, in_w, out_h, out_w, pad;
};

// Column matrix layout: row = (ci * k + ky) * k + kx, column = oy * out_w + ox.
void im2col(const Tensor& x, const ConvSpec& s, const ConvGeometry& g, std::vector<double>& col) {
  const int k = s.kernel;
  const size_t cols = static_cast<size_t>(g.out_h) * g.out_w;
  col.assign(static_cast<size_t>(s.in) * k * k * cols, 0.0);
  const bool replicate = s.padding == Padding::kReplicate;
  for (int ci = 0; ci < s.in; ++ci) {
    const double* src = x.data.data() + static_cast<size_t>(ci) * g.in_h * g.in_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col.data() + (static_cast<size_t>((ci * k + ky) * k + kx)) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          int iy = oy * s.stride - g.pad + ky * s.dilation;
          if (iy < 0 || iy >= g.in_h) {
            if (!replicate) continue;
            iy = std::clamp(iy, 0, g.in_h - 1);
          }
          double* drow = dst + static_cast<size_t>(oy) * g.out_w;
          const double* srow = src + static_cast<size_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            int ix = ox * s.stride - g.pad + kx * s.dilation;
            if (ix < 0 || ix >= g.in_w) {
              if (!replicate) continue;
              ix = std::clamp(ix, 0, g.in_w - 1);
            }
            drow[ox] = srow[ix];
          }
        }
      }
    }
  }
}

void col2im(const std::vector<double>& col, const ConvSpec& s, const ConvGeometry& g, Tensor& dx) {
  const int k = s.kernel;
  const size_t cols = static_cast<size_t>(g.out_h) * g.out_w;
  const bool replicate = s.padding == Padding::kReplicate;
  for (int ci = 0; ci < s.in; ++ci) {
    double* dst = dx.data.data() + static_cast<size_t>(ci) * g.in_h * g.in_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col.data() + (static_cast<size_t>((ci * k + ky) * k + kx)) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          int iy = oy * s.stride - g.pad + ky * s.dilation;
          if (iy < 0 || iy >= g.in_h) {
            if (!replicate) continue;
            iy = std::clamp(iy, 0, g.in_h - 1);
          }
          const double* srow = src + static_cast<size_t>(oy) * g.out_w;
          double* drow = dst + static_cast<size_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            int ix = ox * s.stride - g.pad + kx * s.dilation;
            if (ix < 0 || ix >= g.in_w) {
              if (!replicate) continue;
              ix = std::clamp(ix, 0, g.in_w - 1);
            }
            drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvSpec& s) { return s.kernel == 1 && s.stride == 1; }

}  // namespace

Conv2d::Conv2d(ParamSet& ps, const std::string& name, ConvSpec spec) : spec_(spec) {
  if (spec.in <= 0 || spec.out <= 0 || spec.kernel <= 0 || spec.kernel % 2 == 0 || spec.stride <= 0 ||
      spec.dilation <= 0)
    throw ConfigError("conv " + name + ": invalid spec");
  weight_ = ps.add(name + ".weight", {spec.out, spec.in, spec.kernel, spec.kernel});
  bias_ = ps.add(name + ".bias", {spec.out});
}

int Conv2d::out_size(int in) const {
  const int pad = spec_.dilation * (spec_.kernel - 1) / 2;
  return (in + 2 * pad - spec_.dilation * (spec_.kernel - 1) - 1) / spec_.stride + 1;
}

Tensor Conv2d::forward(const ParamSet& ps, const Tensor& x) const {
  if (x.c != spec_.in)
    throw ShapeError("conv: expected " + std::to_string(spec_.in) + " input channels, got " + x.shape_str());
  const ConvGeometry g{x.h, x.w, out_size(x.h), out_size(x.w), spec_.dilation * (spec_.kernel - 1) / 2};
  const int kk = spec_.in * spec_.kernel * spec_.kernel;
  const int cols = g.out_h * g.out_w;
  Tensor y(spec_.out, g.out_h, g.out_w);

  ConstMapMat wmat(ps[weight_].value.data(), spec_.out, kk);
  MapMat ymat(y.data.data(), spec_.out, cols);
  if (is_pointwise(spec_)) {
    product(ymat, wmat, ConstMapMat(x.data.data(), kk, cols), false);
  } else {
    thread_local std::vector<double> col;
    im2col(x, spec_, g, col);
    product(ymat, wmat, ConstMapMat(col.data(), kk, cols), false);
  }
  const auto& b = ps[bias_].value;
  for (int o = 0; o < spec_.out; ++o)
    for (int j = 0; j < cols; ++j) ymat(o, j) += b[o];
  return y;
}

Tensor Conv2d::backward(const ParamSet& ps, const Tensor& x, const Tensor& dy, GradSet* grads,
                        bool need_input_grad) const {
  const ConvGeometry g{x.h, x.w, out_size(x.h), out_size(x.w), spec_.dilation * (spec_.kernel - 1) / 2};
  if (dy.c != spec_.out || dy.h != g.out_h || dy.w != g.out_w)
    throw ShapeError("conv backward: gradient shape " + dy.shape_str());
  const int kk = spec_.in * spec_.kernel * spec_.kernel;
  const int cols = g.out_h * g.out_w;
  ConstMapMat dymat(dy.data.data(), spec_.out, cols);
  ConstMapMat wmat(ps[weight_].value.data(), spec_.out, kk);

  const bool pointwise = is_pointwise(spec_);
  thread_local std::vector<double> col;
  if (!pointwise) im2col(x, spec_, g, col);
  const double* colp = pointwise ? x.data.data() : col.data();

  if (grads != nullptr) {
    MapMat dw((*grads)[weight_].data(), spec_.out, kk);
    product(dw, dymat, ConstMapMat(colp, kk, cols).transpose(), true);
    auto& db = (*grads)[bias_];
    for (int o = 0; o < spec_.out; ++o) {
      double acc = 0.0;
      for (int j = 0; j < cols; ++j) acc += dymat(o, j);
      db[o] += acc;
    }
  }
  if (!need_input_grad) return {};

  Tensor dx(x.c, x.h, x.w);
  if (pointwise) {
    product(MapMat(dx.data.data(), kk, cols), wmat.transpose(), dymat, false);
  } else {
    thread_local std::vector<double> dcol;
    dcol.resize(static_cast<size_t>(kk) * cols);
    product(MapMat(dcol.data(), kk, cols), wmat.transpose(), dymat, false);
    col2im(dcol, spec_, g, dx);
  }
  return dx;
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor y = x;
  for (double& v : y.data)
    if (v < 0.0) v *= slope;
  return y;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double slope) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.size(); ++i)
    if (x.data[i] < 0.0) dx.data[i] *= slope;
  return dx;
}

namespace {

struct Tap {
  int i0, i1;
  double w0, w1;
};

std::vector<Tap> bilinear_taps(int in, int factor) {
  std::vector<Tap> taps(static_cast<size_t>(in) * factor);
  for (int o = 0; o < in * factor; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    const double l = src - i0;
    taps[o] = Tap{i0, i1, 1.0 - l, l};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int factor) {
  if (factor == 1) return x;
  const auto ty = bilinear_taps(x.h, factor);
  const auto tx = bilinear_taps(x.w, factor);
  Tensor y(x.c, x.h * factor, x.w * factor);
  for (int ch = 0; ch < x.c; ++ch)
    for (int oy = 0; oy < y.h; ++oy) {
      const Tap& a = ty[oy];
      for (int ox = 0; ox < y.w; ++ox) {
        const Tap& b = tx[ox];
        y.at(ch, oy, ox) = a.w0 * (b.w0 * x.at(ch, a.i0, b.i0) + b.w1 * x.at(ch, a.i0, b.i1)) +
                           a.w1 * (b.w0 * x.at(ch, a.i1, b.i0) + b.w1 * x.at(ch, a.i1, b.i1));
      }
    }
  return y;
}

Tensor upsample_bilinear_backward(const Tensor& dy, int factor, int in_h, int in_w) {
  if (factor == 1) return dy;
  const auto ty = bilinear_taps(in_h, factor);
  const auto tx = bilinear_taps(in_w, factor);
  Tensor dx(dy.c, in_h, in_w);
  for (int ch = 0; ch < dy.c; ++ch)
    for (int oy = 0; oy < dy.h; ++oy) {
      const Tap& a = ty[oy];
      for (int ox = 0; ox < dy.w; ++ox) {
        const Tap& b = tx[ox];
        const double g = dy.at(ch, oy, ox);
        dx.at(ch, a.i0, b.i0) += a.w0 * b.w0 * g;
        dx.at(ch, a.i0, b.i1) += a.w0 * b.w1 * g;
        dx.at(ch, a.i1, b.i0) += a.w1 * b.w0 * g;
        dx.at(ch, a.i1, b.i1) += a.w1 * b.w1 * g;
      }
    }
  return dx;
}

Tensor avg_pool2(const Tensor& x) {
  if (x.h % 2 != 0 || x.w % 2 != 0) throw ShapeError("avg_pool2: odd spatial size " + x.shape_str());
  Tensor y(x.c, x.h / 2, x.w / 2);
  for (int ch = 0; ch < x.c; ++ch)
    for (int oy = 0; oy < y.h; ++oy)
      for (int ox = 0; ox < y.w; ++ox)
        y.at(ch, oy, ox) = 0.25 * (x.at(ch, 2 * oy, 2 * ox) + x.at(ch, 2 * oy, 2 * ox + 1) +
                                   x.at(ch, 2 * oy + 1, 2 * ox) + x.at(ch, 2 * oy + 1, 2 * ox + 1));
  return y;
}

Tensor avg_pool2_backward(const Tensor& dy) {
  Tensor dx(dy.c, dy.h * 2, dy.w * 2);
  for (int ch = 0; ch < dy.c; ++ch)
    for (int y = 0; y < dx.h; ++y)
      for (int x = 0; x < dx.w; ++x) dx.at(ch, y, x) = 0.25 * dy.at(ch, y / 2, x / 2);
  return dx;
}

Tensor global_avg_pool(const Tensor& x) {
  Tensor y(x.c, 1, 1);
  const double inv = 1.0 / static_cast<double>(x.plane());
  for (int ch = 0; ch < x.c; ++ch) {
    double acc = 0.0;
    for (double v : x.channel(ch)) acc += v;
    y.data[ch] = acc * inv;
  }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& dy, int h, int w) {
  Tensor dx(dy.c, h, w);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ch = 0; ch < dy.c; ++ch)
    for (double& v : dx.channel(ch)) v = dy.data[ch] * inv;
  return dx;
}

}  // namespace featgen
