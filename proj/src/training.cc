#include "featgen/training.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "featgen/errors.h"
#include "featgen/runtime.h"

namespace featgen {

void LsrParams::validate() const {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must be in [0, 1)");
  if (num_classes < 2) throw ConfigError("LSR needs at least two classes");
}

double lsr_weight(int k, int y, const LsrParams& params) {
  params.validate();
  const int K = params.num_classes;
  if (k < 0 || k >= K || y < 0 || y >= K)
    throw RangeError("lsr_weight: class id out of range (k=" + std::to_string(k) + ", y=" + std::to_string(y) +
                     ", K=" + std::to_string(K) + ")");
  const double off = params.epsilon / K;
  return k == y ? 1.0 - (K - 1) * off : off;
}

double smoothed_loss_sum(const LogitMap& logits, const LabelMask& gt, double epsilon, Tensor* dlogits,
                         double grad_scale, int64_t* count) {
  const Tensor& r = logits.data;
  const int K = r.c;
  if (r.h != gt.height() || r.w != gt.width())
    throw ShapeError("loss: logits " + r.shape_str() + " vs mask " + std::to_string(gt.height()) + "x" +
                     std::to_string(gt.width()));
  if (K != gt.num_classes()) throw ShapeError("loss: class count mismatch");
  if (dlogits) *dlogits = Tensor(K, r.h, r.w);
  const double off = epsilon / K;
  const double on = 1.0 - (K - 1) * off;
  const size_t plane = r.plane();
  double total = 0.0;
  int64_t n = 0;
  std::vector<double> p(K);
  for (size_t i = 0; i < plane; ++i) {
    const uint8_t y = gt.labels()[i];
    if (y == kIgnoreLabel) continue;
    if (y >= K) throw RangeError("loss: label " + std::to_string(y) + " out of range");
    double mx = r.data[i];
    for (int k = 1; k < K; ++k) mx = std::max(mx, r.data[k * plane + i]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += (p[k] = std::exp(r.data[k * plane + i] - mx));
    const double lse = mx + std::log(z);
    double weighted = 0.0;
    for (int k = 0; k < K; ++k) weighted += (k == y ? on : off) * r.data[k * plane + i];
    total += lse - weighted;
    ++n;
    if (dlogits)
      for (int k = 0; k < K; ++k) dlogits->data[k * plane + i] = grad_scale * (p[k] / z - (k == y ? on : off));
  }
  if (count) *count = n;
  return total;
}

namespace {

int64_t valid_pixels(const LabelMask& m) {
  return std::count_if(m.labels().begin(), m.labels().end(), [](uint8_t v) { return v != kIgnoreLabel; });
}

}  // namespace

double branch_loss(std::span<const LogitMap> logits, std::span<const LabelMask> gts, double epsilon,
                   std::vector<Tensor>* dlogits) {
  if (logits.size() != gts.size()) throw ShapeError("branch_loss: batch size mismatch");
  int64_t n = 0;
  for (const auto& g : gts) n += valid_pixels(g);
  if (n == 0) throw RangeError("branch_loss: batch has no non-ignored pixel");
  if (dlogits) dlogits->assign(logits.size(), Tensor());
  const double inv = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i)
    total += smoothed_loss_sum(logits[i], gts[i], epsilon, dlogits ? &(*dlogits)[i] : nullptr, inv, nullptr);
  return total * inv;
}

double cross_entropy(std::span<const LogitMap> logits, std::span<const LabelMask> gts) {
  if (logits.size() != gts.size()) throw ShapeError("cross_entropy: batch size mismatch");
  double total = 0.0;
  int64_t n = 0;
  for (size_t b = 0; b < logits.size(); ++b) {
    const Tensor& r = logits[b].data;
    const LabelMask& gt = gts[b];
    if (r.h != gt.height() || r.w != gt.width()) throw ShapeError("cross_entropy: shape mismatch");
    const size_t plane = r.plane();
    for (size_t i = 0; i < plane; ++i) {
      const uint8_t y = gt.labels()[i];
      if (y == kIgnoreLabel) continue;
      if (y >= r.c) throw RangeError("cross_entropy: label out of range");
      double mx = r.data[i];
      for (int k = 1; k < r.c; ++k) mx = std::max(mx, r.data[k * plane + i]);
      double z = 0.0;
      for (int k = 0; k < r.c; ++k) z += std::exp(r.data[k * plane + i] - mx);
      total += -(r.data[y * plane + i] - mx - std::log(z));
      ++n;
    }
  }
  if (n == 0) throw RangeError("cross_entropy: batch has no non-ignored pixel");
  return total / static_cast<double>(n);
}

void BatchComposition::validate() const {
  if (batch_size <= 0) throw ConfigError("training.batch_size must be positive");
  if (!(real_fraction >= 0.0 && real_fraction <= 1.0)) throw ConfigError("training.real_fraction must be in [0, 1]");
}

int BatchComposition::real_count() const {
  return static_cast<int>(std::lround(real_fraction * batch_size));
}

void LrSchedule::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("training.base_lr must be > 0");
  if (max_iter <= 0) throw ConfigError("training.max_iter must be positive");
  if (!(power > 0.0)) throw ConfigError("training.power must be > 0");
}

double poly_lr(int iter, const LrSchedule& schedule) {
  schedule.validate();
  if (iter < 0 || iter > schedule.max_iter)
    throw RangeError("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                     std::to_string(schedule.max_iter) + "]");
  return schedule.base_lr *
         std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(schedule.max_iter), schedule.power);
}

void OhnmParams::validate() const {
  if (pool_size <= 0 || top_k <= 0 || refresh_interval <= 0) throw ConfigError("ohnm sizes must be positive");
  if (top_k > pool_size) throw ConfigError("ohnm.top_k must not exceed ohnm.pool_size");
}

std::vector<size_t> ohnm_select(std::span<const double> losses, int top_k) {
  if (losses.empty()) throw EmptySourceError("ohnm_select: no candidates");
  if (top_k < 0 || static_cast<size_t>(top_k) > losses.size())
    throw RangeError("ohnm_select: top_k " + std::to_string(top_k) + " exceeds " + std::to_string(losses.size()) +
                     " candidates");
  std::vector<size_t> idx(losses.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + top_k, idx.end(), [&](size_t a, size_t b) {
    return losses[a] > losses[b] || (losses[a] == losses[b] && a < b);
  });
  idx.resize(top_k);
  return idx;
}

std::vector<LabelMask> ohnm_select(std::span<const OhnmCandidate> candidates, int top_k) {
  std::vector<double> losses;
  for (const auto& c : candidates) losses.push_back(c.loss);
  std::vector<LabelMask> out;
  for (size_t i : ohnm_select(losses, top_k)) out.push_back(candidates[i].mask);
  return out;
}

StepReport compute_mixed_gradients(const SegModel& model, std::span<const RealItem> real,
                                   std::span<const GanSample> syn, double epsilon, GradSet& grads) {
  LsrParams{epsilon, model.config().num_classes}.validate();
  StepReport report;
  report.n_real = static_cast<int>(real.size());
  report.n_syn = static_cast<int>(syn.size());

  int64_t n_real_px = 0, n_syn_px = 0;
  for (const auto& r : real) n_real_px += valid_pixels(*r.mask);
  for (const auto& s : syn) n_syn_px += valid_pixels(s.mask);
  if (!real.empty() && n_real_px == 0) throw RangeError("real batch has no non-ignored pixel");
  if (!syn.empty() && n_syn_px == 0) throw RangeError("synthetic batch has no non-ignored pixel");

  const size_t n = real.size() + syn.size();
  std::vector<GradSet> per(n);
  std::vector<double> sums(n, 0.0);
  parallel_for(n, [&](size_t i) {
    per[i] = GradSet(model.params());
    Tensor dlogits;
    if (i < real.size()) {
      const RealItem& item = real[i];
      const ImageTensor img = item.flip ? ImageTensor(hflip(item.image->data)) : *item.image;
      const LabelMask mask = item.flip ? item.mask->hflip() : *item.mask;
      SegModel::EncoderTrace et;
      SegModel::DecoderTrace dt;
      const LogitMap logits = model.decode(model.encode(img, &et), &dt);
      sums[i] = smoothed_loss_sum(logits, mask, 0.0, &dlogits, 1.0 / static_cast<double>(n_real_px), nullptr);
      const Tensor dfeat = model.decode_backward(dt, dlogits, &per[i]);
      model.encode_backward(et, dfeat, &per[i]);
    } else {
      const GanSample& item = syn[i - real.size()];
      SegModel::DecoderTrace dt;
      const LogitMap logits = model.decode(item.feature, &dt);
      sums[i] = smoothed_loss_sum(logits, item.mask, epsilon, &dlogits, 1.0 / static_cast<double>(n_syn_px),
                                  nullptr);
      model.decode_backward(dt, dlogits, &per[i]);
    }
  });

  grads.zero();
  double real_sum = 0.0, syn_sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    grads.add(per[i]);
    (i < real.size() ? real_sum : syn_sum) += sums[i];
  }
  if (!real.empty()) report.real_loss = real_sum / static_cast<double>(n_real_px);
  if (!syn.empty()) report.syn_loss = syn_sum / static_cast<double>(n_syn_px);
  return report;
}

StepReport mixed_step(SegModel& model, SgdMomentum& optimizer, std::span<const RealItem> real,
                      std::span<const GanSample> syn, double epsilon, double lr) {
  GradSet grads(model.params());
  const StepReport report = compute_mixed_gradients(model, real, syn, epsilon, grads);
  if (report.real_loss && !std::isfinite(*report.real_loss)) throw NonFiniteLossError("real", *report.real_loss);
  if (report.syn_loss && !std::isfinite(*report.syn_loss)) throw NonFiniteLossError("syn", *report.syn_loss);
  if (!grads.all_finite()) throw NonFiniteLossError("gradient", NAN);
  const size_t first = real.empty() ? model.encoder_param_end() : 0;
  optimizer.step(model.params(), grads, lr, first);
  return report;
}

ConfusionMatrix evaluate_confusion(const SegModel& model, std::span<const Sample> samples) {
  const int K = model.config().num_classes;
  std::vector<ConfusionMatrix> parts(samples.size(), ConfusionMatrix(K));
  parallel_for(samples.size(), [&](size_t i) {
    parts[i].accumulate(argmax_labels(model.predict(samples[i].image).data), samples[i].mask);
  });
  ConfusionMatrix conf(K);
  for (const auto& p : parts) conf.merge(p);
  return conf;
}

MetricBundle evaluate(const SegModel& model, std::span<const Sample> samples) {
  return compute_metrics(evaluate_confusion(model, samples));
}

void TrainConfig::validate() const {
  batch.validate();
  schedule.validate();
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("training.momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("training.weight_decay must be >= 0");
  LsrParams{epsilon, 2}.validate();
  if (eval_interval <= 0 || log_interval <= 0) throw ConfigError("training intervals must be positive");
  ohnm.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch.batch_size},
          {"real_fraction", batch.real_fraction},
          {"base_lr", schedule.base_lr},
          {"max_iter", schedule.max_iter},
          {"power", schedule.power},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"epsilon", epsilon},
          {"eval_interval", eval_interval},
          {"log_interval", log_interval},
          {"hflip", hflip},
          {"ohnm",
           {{"enabled", ohnm.enabled},
            {"pool_size", ohnm.pool_size},
            {"top_k", ohnm.top_k},
            {"refresh_interval", ohnm.refresh_interval}}},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch.batch_size = j.value("batch_size", c.batch.batch_size);
  c.batch.real_fraction = j.value("real_fraction", c.batch.real_fraction);
  c.schedule.base_lr = j.value("base_lr", c.schedule.base_lr);
  c.schedule.max_iter = j.value("max_iter", c.schedule.max_iter);
  c.schedule.power = j.value("power", c.schedule.power);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.log_interval = j.value("log_interval", c.log_interval);
  c.hflip = j.value("hflip", c.hflip);
  if (j.contains("ohnm")) {
    const auto& o = j.at("ohnm");
    c.ohnm.enabled = o.value("enabled", c.ohnm.enabled);
    c.ohnm.pool_size = o.value("pool_size", c.ohnm.pool_size);
    c.ohnm.top_k = o.value("top_k", c.ohnm.top_k);
    c.ohnm.refresh_interval = o.value("refresh_interval", c.ohnm.refresh_interval);
  }
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

// Mean CE of each candidate mask's generated feature under the current model.
std::vector<double> candidate_losses(const SegModel& model, const FeatureGan& gan,
                                     std::span<const SampledMask> candidates, std::span<const LatentCode> zs) {
  std::vector<double> losses(candidates.size());
  parallel_for(candidates.size(), [&](size_t i) {
    const LogitMap logits = model.decode(gan.generate(candidates[i].mask, zs[i]));
    losses[i] = cross_entropy(std::span(&logits, 1), std::span(&candidates[i].mask, 1));
  });
  return losses;
}

}  // namespace

TrainResult train_baseline(const TrainConfig& config, SegModel& model, std::span<const Sample> train,
                           std::span<const Sample> val, const EventSink& sink) {
  TrainConfig c = config;
  c.batch.real_fraction = 1.0;
  return train_augmented(c, model, nullptr, nullptr, train, val, sink);
}

TrainResult train_augmented(const TrainConfig& config, SegModel& model, const FeatureGan* gan,
                            const MaskSourceConfig* masks, std::span<const Sample> train,
                            std::span<const Sample> val, const EventSink& sink) {
  config.validate();
  const int n_real = config.batch.real_count();
  const int n_syn = config.batch.syn_count();
  if (n_real > 0 && train.empty()) throw EmptySourceError("training split is empty");
  if (val.empty()) throw EmptySourceError("validation split is empty");
  if (n_syn > 0) {
    if (!gan) throw MissingArtifactError("synthetic items requested but no generator was given");
    if (!masks) throw MissingArtifactError("synthetic items requested but no mask source was given");
    if (gan->config().num_classes != model.config().num_classes ||
        gan->config().feature_channels != model.config().feature_channels ||
        gan->config().stride != model.config().stride)
      throw ConfigError("generator output does not match the segmentation cut");
  }

  std::mt19937_64 rng_real = derive_rng(config.seed, "real");
  std::mt19937_64 rng_syn = derive_rng(config.seed, "syn");
  std::mt19937_64 rng_z = derive_rng(config.seed, "z");
  std::mt19937_64 rng_ohnm = derive_rng(config.seed, "ohnm");

  SgdMomentum opt(model.params(), config.momentum, config.weight_decay);
  TrainResult result;
  auto record_eval = [&](int iter) {
    result.history.push_back({iter, evaluate(model, val)});
    if (sink) sink({{"event", "eval"}, {"iter", iter}, {"metrics", result.history.back().metrics.to_json()}});
  };
  record_eval(0);

  MaskSourceConfig active;
  if (masks) active = *masks;
  const int max_iter = config.schedule.max_iter;
  for (int it = 0; it < max_iter; ++it) {
    const double lr = poly_lr(it, config.schedule);

    std::vector<RealItem> real(n_real);
    std::uniform_int_distribution<size_t> pick(0, train.empty() ? 0 : train.size() - 1);
    std::bernoulli_distribution coin(0.5);
    for (auto& r : real) {
      const Sample& s = train[pick(rng_real)];
      r = RealItem{&s.image, &s.mask, config.hflip && coin(rng_real)};
    }

    std::vector<GanSample> syn;
    if (n_syn > 0) {
      if (config.ohnm.enabled && it % config.ohnm.refresh_interval == 0) {
        const auto pool = sample_masks(*masks, config.ohnm.pool_size, rng_ohnm);
        std::vector<LatentCode> zs;
        for (size_t i = 0; i < pool.size(); ++i) zs.push_back(gan->sample_latent(rng_ohnm));
        const auto losses = candidate_losses(model, *gan, pool, zs);
        std::vector<LabelMask> chosen;
        for (size_t i : ohnm_select(losses, config.ohnm.top_k)) chosen.push_back(pool[i].mask);
        active.primary = MaskProvider("ohnm", std::move(chosen));
        if (sink) {
          const auto top = *std::max_element(losses.begin(), losses.end());
          sink({{"event", "ohnm_refresh"}, {"iter", it}, {"max_loss", top}});
        }
      }
      const auto sampled = sample_masks(active, n_syn, rng_syn);
      std::vector<LatentCode> zs;
      for (int i = 0; i < n_syn; ++i) zs.push_back(gan->sample_latent(rng_z));
      syn.resize(sampled.size());
      parallel_for(sampled.size(), [&](size_t i) {
        syn[i] = GanSample{sampled[i].mask, gan->generate(sampled[i].mask, zs[i])};
      });
    }

    const StepReport rep = mixed_step(model, opt, real, syn, config.epsilon, lr);
    if (sink && ((it + 1) % config.log_interval == 0 || it == 0))
      sink({{"event", "step"},
            {"iter", it + 1},
            {"lr", lr},
            {"real_loss", optional_json(rep.real_loss)},
            {"syn_loss", optional_json(rep.syn_loss)}});
    if (it + 1 == max_iter) model.params().round_to_float();
    if ((it + 1) % config.eval_interval == 0) record_eval(it + 1);
  }
  result.final_metrics = max_iter % config.eval_interval == 0 ? result.history.back().metrics : evaluate(model, val);
  return result;
}

std::vector<GanLossReport> train_generator(FeatureGan& gan, std::span<const GanSample> pool,
                                           const GanTrainConfig& config, const EventSink& sink, int log_interval) {
  if (pool.size() < 2) throw EmptySourceError("generator training needs at least two patches");
  if (config.steps <= 0) throw ConfigError("generator.steps must be positive");
  GanTrainer trainer(gan, config);
  std::mt19937_64 rng = derive_rng(config.seed, "pairs");
  std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
  std::vector<GanLossReport> history;
  history.reserve(config.steps);
  for (int step = 0; step < config.steps; ++step) {
    const size_t a = pick(rng);
    const size_t b = pick(rng);
    history.push_back(trainer.step(pool[a], pool[b]));
    if (sink && ((step + 1) % log_interval == 0 || step == 0)) {
      nlohmann::json e = history.back().to_json();
      e["event"] = "gan_step";
      e["step"] = step + 1;
      sink(e);
    }
  }
  gan.generator().params().round_to_float();
  gan.discriminator().params().round_to_float();
  gan.latent_encoder().params().round_to_float();
  return history;
}

}  // namespace featgen
