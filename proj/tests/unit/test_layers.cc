#include <doctest.h>

#include "featgen/errors.h"
#include "featgen/layers.h"
#include "test_util.h"

using namespace featgen;
using namespace featgen::test;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

// Naive direct convolution used as an oracle.
Tensor naive_conv(const ParamSet& ps, const Conv2d& conv, const Tensor& x) {
  const ConvSpec& s = conv.spec();
  const int oh = conv.out_size(x.h), ow = conv.out_size(x.w);
  const int pad = s.dilation * (s.kernel - 1) / 2;
  Tensor y(s.out, oh, ow);
  const auto& w = ps[conv.weight_index()].value;
  const auto& b = ps[conv.bias_index()].value;
  for (int o = 0; o < s.out; ++o)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b[o];
        for (int i = 0; i < s.in; ++i)
          for (int ky = 0; ky < s.kernel; ++ky)
            for (int kx = 0; kx < s.kernel; ++kx) {
              int iy = oy * s.stride - pad + ky * s.dilation;
              int ix = ox * s.stride - pad + kx * s.dilation;
              if (s.padding == Padding::kReplicate) {
                iy = std::clamp(iy, 0, x.h - 1);
                ix = std::clamp(ix, 0, x.w - 1);
              } else if (iy < 0 || ix < 0 || iy >= x.h || ix >= x.w) {
                continue;
              }
              acc += w[((static_cast<size_t>(o) * s.in + i) * s.kernel + ky) * s.kernel + kx] * x.at(i, iy, ix);
            }
        y.at(o, oy, ox) = acc;
      }
  return y;
}

}  // namespace

TEST_CASE("conv matches a direct convolution for every stride, dilation and padding") {
  std::mt19937_64 rng(1);
  for (int stride : {1, 2})
    for (int dilation : {1, 2, 3})
      for (Padding pad : {Padding::kZero, Padding::kReplicate})
        for (int k : {1, 3}) {
          ParamSet ps;
          Conv2d conv(ps, "c", ConvSpec{.in = 3, .out = 4, .kernel = k, .stride = stride, .dilation = dilation,
                                        .padding = pad});
          init_fan_in_normal(ps, rng);
          for (double& v : ps[conv.bias_index()].value) v = 0.3;
          const Tensor x = random_tensor(3, 8, 10, rng);
          const Tensor got = conv.forward(ps, x);
          const Tensor want = naive_conv(ps, conv, x);
          REQUIRE(got.same_shape(want));
          for (size_t i = 0; i < got.size(); ++i) CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
        }
}

TEST_CASE("conv backward is the adjoint of forward and matches finite differences") {
  std::mt19937_64 rng(2);
  for (Padding pad : {Padding::kZero, Padding::kReplicate}) {
    ParamSet ps;
    Conv2d conv(ps, "c", ConvSpec{.in = 2, .out = 3, .kernel = 3, .stride = 2, .dilation = 1, .padding = pad});
    init_fan_in_normal(ps, rng);
    const Tensor x = random_tensor(2, 8, 8, rng);
    const Tensor dy = random_tensor(3, 4, 4, rng);
    GradSet g(ps);
    const Tensor dx = conv.backward(ps, x, dy, &g);
    // <conv(x) - b, dy> is linear in x, so <dx, x> must equal it.
    Tensor y = conv.forward(ps, x);
    for (int o = 0; o < 3; ++o)
      for (double& v : y.channel(o)) v -= ps[conv.bias_index()].value[o];
    CHECK(dot(dx, x) == doctest::Approx(dot(y, dy)).epsilon(1e-10));
    const auto r = check_gradient(ps, g, [&] { return dot(conv.forward(ps, x), dy); }, 0, ps.size(), 20, rng);
    CHECK(r.worst <= 1e-6);
  }
}

TEST_CASE("bilinear upsample backward is the adjoint") {
  std::mt19937_64 rng(3);
  for (int f : {2, 4}) {
    const Tensor x = random_tensor(2, 3, 5, rng);
    const Tensor dy = random_tensor(2, 3 * f, 5 * f, rng);
    CHECK(dot(upsample_bilinear(x, f), dy) ==
          doctest::Approx(dot(x, upsample_bilinear_backward(dy, f, 3, 5))).epsilon(1e-12));
  }
}

TEST_CASE("constant input stays constant through bilinear upsampling") {
  const Tensor x(1, 2, 2, 0.7);
  for (double v : upsample_bilinear(x, 4).data) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("pooling and activations have matching adjoints") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor(2, 4, 6, rng);
  const Tensor dy = random_tensor(2, 2, 3, rng);
  CHECK(dot(avg_pool2(x), dy) == doctest::Approx(dot(x, avg_pool2_backward(dy))).epsilon(1e-12));
  const Tensor g = random_tensor(2, 1, 1, rng);
  CHECK(dot(global_avg_pool(x), g) == doctest::Approx(dot(x, global_avg_pool_backward(g, 4, 6))).epsilon(1e-12));
  const Tensor d = random_tensor(2, 4, 6, rng);
  const Tensor lr = leaky_relu_backward(x, d, 0.2);
  for (size_t i = 0; i < x.size(); ++i) CHECK(lr.data[i] == (x.data[i] > 0 ? d.data[i] : 0.2 * d.data[i]));
}

TEST_CASE("concat and split are inverses") {
  std::mt19937_64 rng(5);
  const Tensor a = random_tensor(2, 3, 3, rng), b = random_tensor(4, 3, 3, rng);
  const Tensor* parts[] = {&a, &b};
  const Tensor c = concat_channels(parts);
  const int widths[] = {2, 4};
  const auto back = split_channels(c, widths);
  CHECK(back[0].data == a.data);
  CHECK(back[1].data == b.data);
}

TEST_CASE("optimizers follow their update rules") {
  ParamSet ps;
  ps.add("w", {2, 1});
  ps[0].value = {1.0, -2.0};
  GradSet g(ps);
  g[0] = {0.5, 0.25};
  SgdMomentum sgd(ps, 0.9, 0.1);
  sgd.step(ps, g, 0.1);
  // v = 0.1 * (g + 0.1 w)
  CHECK(ps[0].value[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.1)));
  CHECK(ps[0].value[1] == doctest::Approx(-2.0 - 0.1 * (0.25 - 0.2)));
  const double v0 = 0.1 * (0.5 + 0.1);
  const double w0 = ps[0].value[0];
  sgd.step(ps, g, 0.1);
  CHECK(ps[0].value[0] == doctest::Approx(w0 - (0.9 * v0 + 0.1 * (0.5 + 0.1 * w0))));

  ParamSet pa;
  pa.add("w", {1, 1});
  pa[0].value = {0.0};
  GradSet ga(pa);
  ga[0] = {3.0};
  Adam adam(pa, 0.01, 0.5, 0.999);
  adam.step(pa, ga);
  // First bias-corrected step moves by lr in the direction of -sign(g).
  CHECK(pa[0].value[0] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("sgd range step leaves other params untouched") {
  ParamSet ps;
  ps.add("a", {1, 1});
  ps.add("b", {1, 1});
  ps[0].value = {1.0};
  ps[1].value = {1.0};
  GradSet g(ps);
  g[0] = {1.0};
  g[1] = {1.0};
  SgdMomentum sgd(ps, 0.9, 5e-4);
  sgd.step(ps, g, 0.1, 1);
  CHECK(ps[0].value[0] == 1.0);
  CHECK(ps[1].value[0] != 1.0);
}
