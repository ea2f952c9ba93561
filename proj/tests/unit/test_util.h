#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "featgen/feature_gan.h"
#include "featgen/params.h"
#include "featgen/seg_model.h"
#include "featgen/types.h"

namespace featgen::test {

inline SegModelConfig small_seg_config() {
  SegModelConfig c;
  c.num_classes = 3;
  c.stride = 4;
  c.feature_channels = 8;
  c.encoder_widths = {4, 6};
  c.decoder_width = 8;
  c.decoder_head_width = 6;
  c.seed = 17;
  return c;
}

inline GeneratorConfig small_gan_config() {
  GeneratorConfig c;
  c.num_classes = 3;
  c.feature_channels = 8;
  c.stride = 4;
  c.latent_dim = 3;
  c.aspp = {{4, 6}, {1, 2}};
  c.disc_aspp = {{3, 4}, {1, 2}};
  c.unet_first_width = 6;
  c.unet_inner_width = 8;
  c.unet_depth = 1;
  c.disc_width = 6;
  c.latent_encoder_width = 6;
  c.zero_init_disc_head = false;
  c.seed = 23;
  return c;
}

inline Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(c, h, w);
  for (double& v : t.data) v = u(rng);
  return t;
}

inline ImageTensor random_image(int h, int w, std::mt19937_64& rng) {
  return ImageTensor(random_tensor(3, h, w, rng, 0.0, 1.0));
}

inline LabelMask random_mask(int h, int w, int k, std::mt19937_64& rng, double ignore_prob = 0.0) {
  LabelMask m(h, w, k);
  std::uniform_int_distribution<int> cls(0, k - 1);
  std::bernoulli_distribution ign(ignore_prob);
  for (auto& v : m.labels()) v = ign(rng) ? kIgnoreLabel : static_cast<uint8_t>(cls(rng));
  return m;
}

// Blocky mask: random class per 4x4 cell, so masks look like layouts.
inline LabelMask block_mask(int h, int w, int k, std::mt19937_64& rng) {
  LabelMask m(h, w, k);
  std::uniform_int_distribution<int> cls(0, k - 1);
  for (int y = 0; y < h; y += 4)
    for (int x = 0; x < w; x += 4) {
      const auto c = static_cast<uint8_t>(cls(rng));
      for (int dy = 0; dy < 4 && y + dy < h; ++dy)
        for (int dx = 0; dx < 4 && x + dx < w; ++dx) m.at(y + dy, x + dx) = c;
    }
  return m;
}

inline double rel_error(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-6});
}

struct GradCheck {
  int checked = 0;
  double worst = 0.0;
};

// Central differences (step 1e-5) of `loss` for `count` random scalars of
// params [first, last), compared to the analytic gradient.
inline GradCheck check_gradient(ParamSet& ps, const GradSet& analytic, const std::function<double()>& loss,
                                size_t first, size_t last, int count, std::mt19937_64& rng) {
  std::vector<std::pair<size_t, size_t>> scalars;
  for (size_t p = first; p < last; ++p)
    for (size_t j = 0; j < ps[p].value.size(); ++j) scalars.push_back({p, j});
  std::shuffle(scalars.begin(), scalars.end(), rng);
  GradCheck r;
  const double h = 1e-5;
  for (int i = 0; i < count && i < static_cast<int>(scalars.size()); ++i) {
    const auto [p, j] = scalars[i];
    double& w = ps[p].value[j];
    const double w0 = w;
    w = w0 + h;
    const double up = loss();
    w = w0 - h;
    const double down = loss();
    w = w0;
    const double numeric = (up - down) / (2 * h);
    r.worst = std::max(r.worst, rel_error(analytic[p][j], numeric));
    ++r.checked;
  }
  return r;
}

}  // namespace featgen::test
