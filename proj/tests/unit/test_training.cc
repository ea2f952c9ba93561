#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "featgen/errors.h"
#include "featgen/training.h"
#include "test_util.h"

using namespace featgen;
using namespace featgen::test;

TEST_CASE("LSR weight examples") {
  CHECK(lsr_weight(2, 2, {0.0, 5}) == 1.0);
  CHECK(lsr_weight(1, 2, {0.0, 5}) == 0.0);
  CHECK(lsr_weight(3, 3, {1e-4, 19}) == doctest::Approx(1.0 - 18.0 / 19.0 * 1e-4).epsilon(1e-15));
  CHECK(lsr_weight(3, 3, {1e-4, 19}) == doctest::Approx(0.99990526).epsilon(1e-8));
  CHECK(lsr_weight(0, 1, {0.1, 4}) == doctest::Approx(0.025).epsilon(1e-15));
  CHECK_THROWS_AS(lsr_weight(4, 0, {0.1, 4}), RangeError);
  CHECK_THROWS_AS(lsr_weight(0, 0, {1.0, 4}), ConfigError);
}

TEST_CASE("LSR weights sum to one") {
  for (int k = 2; k <= 32; ++k)
    for (double eps : {0.0, 1e-4, 0.1, 0.5})
      for (int y : {0, k - 1}) {
        double s = 0.0;
        for (int c = 0; c < k; ++c) s += lsr_weight(c, y, {eps, k});
        CHECK(std::fabs(s - 1.0) <= 1e-12);
      }
}

TEST_CASE("branch loss closed forms") {
  LogitMap l{Tensor(2, 1, 1)};
  LabelMask y(1, 1, 2, 0);
  CHECK(branch_loss(std::span(&l, 1), std::span(&y, 1), 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  l.data.data = {60.0, -60.0};
  CHECK(branch_loss(std::span(&l, 1), std::span(&y, 1), 0.0) < 1e-25);
  LabelMask ignored(1, 1, 2, kIgnoreLabel);
  CHECK_THROWS_AS(branch_loss(std::span(&l, 1), std::span(&ignored, 1), 0.0), RangeError);
}

TEST_CASE("epsilon 0 branch loss equals cross-entropy") {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng() % 8);
    std::vector<LogitMap> logits;
    std::vector<LabelMask> gts;
    for (int b = 0; b < 3; ++b) {
      logits.push_back({random_tensor(k, 6, 5, rng, -8.0, 8.0)});
      gts.push_back(random_mask(6, 5, k, rng, 0.2));
    }
    gts[0].at(0, 0) = 0;  // at least one valid pixel
    worst = std::max(worst, std::fabs(branch_loss(logits, gts, 0.0) - cross_entropy(logits, gts)));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("smoothed loss gradient is p - q and matches finite differences") {
  std::mt19937_64 rng(2);
  std::vector<LogitMap> logits = {{random_tensor(4, 3, 3, rng, -3.0, 3.0)}, {random_tensor(4, 3, 3, rng, -3.0, 3.0)}};
  std::vector<LabelMask> gts = {random_mask(3, 3, 4, rng, 0.2), random_mask(3, 3, 4, rng)};
  for (double eps : {0.0, 0.1, 0.5}) {
    std::vector<Tensor> d;
    branch_loss(logits, gts, eps, &d);
    double worst = 0.0;
    for (int t = 0; t < 12; ++t) {
      const size_t b = rng() % 2, i = rng() % logits[b].data.size();
      const double old = logits[b].data.data[i];
      logits[b].data.data[i] = old + 1e-5;
      const double up = branch_loss(logits, gts, eps);
      logits[b].data.data[i] = old - 1e-5;
      const double down = branch_loss(logits, gts, eps);
      logits[b].data.data[i] = old;
      const size_t px = i % logits[b].data.plane();
      if (gts[b].labels()[px] == kIgnoreLabel) {
        CHECK(d[b].data[i] == 0.0);
        continue;
      }
      worst = std::max(worst, rel_error(d[b].data[i], (up - down) / 2e-5));
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("gradient descent on one pixel converges to the entropy of the smoothed target") {
  const int k = 4;
  for (double eps : {1e-4, 0.1, 0.5}) {
    double entropy = 0.0;
    for (int c = 0; c < k; ++c) {
      const double q = lsr_weight(c, 2, {eps, k});
      entropy -= q * std::log(q);
    }
    LogitMap l{Tensor(k, 1, 1)};
    const LabelMask y(1, 1, k, 2);
    double loss = 0.0;
    for (int it = 0; it < 100000; ++it) {
      Tensor d;
      loss = smoothed_loss_sum(l, y, eps, &d, 1.0, nullptr);
      for (int c = 0; c < k; ++c) l.data.data[c] -= 3.0 * d.data[c];
    }
    CHECK(loss >= entropy - 1e-12);
    CHECK(loss - entropy <= 1e-6);
  }
}

TEST_CASE("poly learning rate") {
  const LrSchedule s{1e-6, 1000, 0.9};
  CHECK(poly_lr(0, s) == 1e-6);
  CHECK(poly_lr(1000, s) == 0.0);
  CHECK(poly_lr(500, s) == doctest::Approx(5.3589e-7).epsilon(1e-4));
  CHECK(poly_lr(500, s) == doctest::Approx(1e-6 * std::pow(0.5, 0.9)).epsilon(1e-14));
  for (int i = 0; i < 1000; ++i) CHECK(poly_lr(i + 1, s) < poly_lr(i, s));
  CHECK_THROWS_AS(poly_lr(1001, s), RangeError);
  CHECK_THROWS_AS(poly_lr(-1, s), RangeError);
  CHECK_THROWS_AS((LrSchedule{0.0, 10, 0.9}.validate()), ConfigError);
}

TEST_CASE("OHNM selection") {
  const std::vector<double> a = {0.1, 0.9, 0.5};
  CHECK(ohnm_select(a, 1) == std::vector<size_t>{1});
  const std::vector<double> eq(5, 0.3);
  CHECK(ohnm_select(eq, 2) == std::vector<size_t>{0, 1});
  CHECK_THROWS_AS(ohnm_select(std::span<const double>(), 1), EmptySourceError);
  CHECK_THROWS_AS(ohnm_select(a, 4), RangeError);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> losses(1000);
    // Coarse values so ties occur.
    for (double& v : losses) v = static_cast<double>(rng() % 200) / 10.0;
    std::vector<size_t> order(losses.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) { return losses[x] > losses[y]; });
    order.resize(10);
    CHECK(ohnm_select(losses, 10) == order);
  }

  std::vector<OhnmCandidate> cands;
  for (int i = 0; i < 4; ++i) cands.push_back({LabelMask(2, 2, 3, static_cast<uint8_t>(i % 3)), 0.1 * i});
  const auto picked = ohnm_select(cands, 2);
  REQUIRE(picked.size() == 2);
  CHECK(picked[0] == cands[3].mask);
  CHECK(picked[1] == cands[2].mask);
}

TEST_CASE("batch composition rounds the real share") {
  CHECK(BatchComposition{8, 0.7}.real_count() == 6);
  CHECK(BatchComposition{8, 0.7}.syn_count() == 2);
  CHECK(BatchComposition{8, 1.0}.real_count() == 8);
  CHECK(BatchComposition{8, 0.5}.real_count() == 4);
  CHECK(BatchComposition{8, 0.9}.real_count() == 7);
  CHECK(BatchComposition{8, 0.0}.real_count() == 0);
  for (int b = 1; b <= 20; ++b)
    for (double rho = 0.0; rho <= 1.0; rho += 0.05) {
      const BatchComposition c{b, rho};
      CHECK(c.real_count() == std::lround(rho * b));
      CHECK(c.real_count() + c.syn_count() == b);
    }
  CHECK_THROWS_AS((BatchComposition{8, 1.2}.validate()), ConfigError);
  CHECK_THROWS_AS((BatchComposition{0, 0.5}.validate()), ConfigError);
}

namespace {

struct Fixture {
  SegModel model{small_seg_config()};
  std::mt19937_64 rng{4};
  std::vector<ImageTensor> images;
  std::vector<LabelMask> masks;
  std::vector<GanSample> syn;

  Fixture() {
    for (int i = 0; i < 3; ++i) {
      images.push_back(random_image(16, 16, rng));
      masks.push_back(block_mask(16, 16, 3, rng));
      syn.push_back({block_mask(16, 16, 3, rng), FeatureTensor{random_tensor(8, 4, 4, rng), 4}});
    }
  }
  std::vector<RealItem> real(bool flip_second = false) {
    std::vector<RealItem> r;
    for (size_t i = 0; i < images.size(); ++i) r.push_back({&images[i], &masks[i], flip_second && i == 1});
    return r;
  }
};

}  // namespace

TEST_CASE("a step without real items leaves the encoder bit-identical") {
  Fixture f;
  SgdMomentum opt(f.model.params(), 0.9, 5e-4);
  const uint64_t enc = f.model.encoder_checksum(), dec = f.model.decoder_checksum();
  for (int i = 0; i < 3; ++i) mixed_step(f.model, opt, {}, f.syn, 0.1, 0.01);
  CHECK(f.model.encoder_checksum() == enc);
  CHECK(f.model.decoder_checksum() != dec);

  GradSet g(f.model.params());
  compute_mixed_gradients(f.model, {}, f.syn, 0.1, g);
  for (size_t p = 0; p < f.model.encoder_param_end(); ++p)
    for (double v : g[p]) CHECK(v == 0.0);
}

TEST_CASE("a step without synthetic items equals a plain supervised step") {
  Fixture f;
  SegModel plain = f.model;
  const auto real = f.real(true);
  SgdMomentum opt_a(f.model.params(), 0.9, 5e-4), opt_b(plain.params(), 0.9, 5e-4);

  for (int step = 0; step < 2; ++step) {
    mixed_step(f.model, opt_a, real, {}, 0.3, 0.01);

    // Reference: softmax minus one-hot over the pooled pixels, backpropagated per sample.
    int64_t n = 0;
    for (const auto& m : f.masks) n += static_cast<int64_t>(m.size());
    GradSet total(plain.params());
    for (const RealItem& item : real) {
      const ImageTensor img = item.flip ? ImageTensor(hflip(item.image->data)) : *item.image;
      const LabelMask y = item.flip ? item.mask->hflip() : *item.mask;
      SegModel::EncoderTrace et;
      SegModel::DecoderTrace dt;
      const LogitMap l = plain.decode(plain.encode(img, &et), &dt);
      Tensor d(l.data.c, l.data.h, l.data.w);
      const size_t plane = l.data.plane();
      for (size_t i = 0; i < plane; ++i) {
        double mx = l.data.data[i];
        for (int k = 1; k < l.data.c; ++k) mx = std::max(mx, l.data.data[k * plane + i]);
        std::vector<double> e(l.data.c);
        double z = 0.0;
        for (int k = 0; k < l.data.c; ++k) z += (e[k] = std::exp(l.data.data[k * plane + i] - mx));
        for (int k = 0; k < l.data.c; ++k)
          d.data[k * plane + i] = (1.0 / static_cast<double>(n)) * (e[k] / z - (k == y.labels()[i] ? 1.0 : 0.0));
      }
      GradSet g(plain.params());
      plain.encode_backward(et, plain.decode_backward(dt, d, &g), &g);
      total.add(g);
    }
    opt_b.step(plain.params(), total, 0.01);
    CHECK(f.model.params().checksum() == plain.params().checksum());
  }
}

TEST_CASE("gradients are bitwise repeatable") {
  Fixture f;
  const auto real = f.real(true);
  GradSet a(f.model.params());
  compute_mixed_gradients(f.model, real, f.syn, 0.1, a);
  for (int rep = 0; rep < 3; ++rep) {
    // Fresh allocations land at different addresses.
    std::vector<std::vector<double>> spacer(rep + 1, std::vector<double>(rep * 3 + 1));
    const SegModel copy = f.model;
    GradSet b(copy.params());
    compute_mixed_gradients(copy, real, f.syn, 0.1, b);
    for (size_t p = 0; p < a.size(); ++p) CHECK(a[p] == b[p]);
  }
}

TEST_CASE("mixed objective gradient matches finite differences") {
  Fixture f;
  const auto real = f.real(true);
  const double eps = 0.1;
  GradSet g(f.model.params());
  compute_mixed_gradients(f.model, real, f.syn, eps, g);
  auto loss = [&] {
    GradSet scratch(f.model.params());
    return compute_mixed_gradients(f.model, real, f.syn, eps, scratch).total();
  };
  auto& ps = f.model.params();
  const auto dec = check_gradient(ps, g, loss, f.model.encoder_param_end(), ps.size(), 10, f.rng);
  const auto enc = check_gradient(ps, g, loss, 0, f.model.encoder_param_end(), 10, f.rng);
  CHECK(dec.checked == 10);
  CHECK(dec.worst <= 1e-4);
  CHECK(enc.worst <= 1e-4);
}

TEST_CASE("mixed step reports the branch losses") {
  Fixture f;
  SgdMomentum opt(f.model.params(), 0.9, 5e-4);
  const auto real = f.real();
  const StepReport r = mixed_step(f.model, opt, std::span(real).first(2), std::span(f.syn).first(1), 1e-4, 0.0);
  CHECK(r.n_real == 2);
  CHECK(r.n_syn == 1);
  REQUIRE(r.real_loss.has_value());
  REQUIRE(r.syn_loss.has_value());
  CHECK(*r.real_loss > 0.0);
  CHECK(*r.syn_loss > 0.0);
  const StepReport only_syn = mixed_step(f.model, opt, {}, f.syn, 1e-4, 0.0);
  CHECK_FALSE(only_syn.real_loss.has_value());
}

TEST_CASE("non-finite losses abort before any update") {
  Fixture f;
  for (auto& p : f.model.params())
    if (p.name.find("head") != std::string::npos && p.shape.size() == 1) p.value[0] = INFINITY;
  const uint64_t before = f.model.params().checksum();
  SgdMomentum opt(f.model.params(), 0.9, 5e-4);
  CHECK_THROWS_AS(mixed_step(f.model, opt, f.real(), {}, 0.0, 0.01), NonFiniteLossError);
  CHECK(f.model.params().checksum() == before);
}

TEST_CASE("training config JSON round trip and validation") {
  TrainConfig c;
  c.ohnm.enabled = true;
  c.batch.real_fraction = 0.5;
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
  c.ohnm.top_k = 100;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("evaluation history has one record per interval plus iteration 0") {
  std::mt19937_64 rng(5);
  std::vector<Sample> train, val;
  for (int i = 0; i < 4; ++i) {
    train.push_back({random_image(16, 16, rng), block_mask(16, 16, 3, rng), "t"});
    val.push_back({random_image(16, 16, rng), block_mask(16, 16, 3, rng), "v"});
  }
  TrainConfig c;
  c.batch = {2, 1.0};
  c.schedule = {0.01, 7, 0.9};
  c.eval_interval = 3;
  SegModel a(small_seg_config()), b(small_seg_config());
  const TrainResult r = train_baseline(c, a, train, val);
  REQUIRE(r.history.size() == 7 / 3 + 1);
  CHECK(r.history[0].iter == 0);
  CHECK(r.history[1].iter == 3);
  CHECK(r.final_metrics == evaluate(a, val));

  // Same seed, same trajectory; rho = 1 ignores the generator entirely.
  const TrainResult r2 = train_augmented(c, b, nullptr, nullptr, train, val);
  CHECK(a.params().checksum() == b.params().checksum());
  CHECK(r2.final_metrics == r.final_metrics);
}
