#pragma once

#include <string>

#include "featgen/params.h"
#include "featgen/tensor.h"

namespace featgen {

enum class Padding { kZero, kReplicate };

struct ConvSpec {
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
  Padding padding = Padding::kZero;
};

// 2-D convolution with "same" padding of dilation*(kernel-1)/2 on every side.
// Parameters live in the owning network's ParamSet; the layer only stores
// indices, so one layer object serves any number of concurrent forward passes.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamSet& ps, const std::string& name, ConvSpec spec);

  const ConvSpec& spec() const { return spec_; }
  int weight_index() const { return weight_; }
  int bias_index() const { return bias_; }
  int out_size(int in) const;

  Tensor forward(const ParamSet& ps, const Tensor& x) const;
  // Accumulates parameter gradients into `grads` when non-null. Returns dL/dx,
  // or an empty tensor when need_input_grad is false.
  Tensor backward(const ParamSet& ps, const Tensor& x, const Tensor& dy, GradSet* grads,
                  bool need_input_grad = true) const;

 private:
  ConvSpec spec_;
  int weight_ = -1;
  int bias_ = -1;
};

Tensor leaky_relu(const Tensor& x, double slope);
Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double slope);
inline Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }
inline Tensor relu_backward(const Tensor& x, const Tensor& dy) { return leaky_relu_backward(x, dy, 0.0); }

// Bilinear upsampling by an integer factor, half-pixel centers, edge clamped.
Tensor upsample_bilinear(const Tensor& x, int factor);
Tensor upsample_bilinear_backward(const Tensor& dy, int factor, int in_h, int in_w);

// 2x2 average pooling with stride 2; h and w must be even.
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& dy);

Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& dy, int h, int w);

}  // namespace featgen
