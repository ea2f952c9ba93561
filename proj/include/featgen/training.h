#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "featgen/feature_gan.h"
#include "featgen/mask_sources.h"
#include "featgen/metrics.h"
#include "featgen/params.h"
#include "featgen/seg_model.h"
#include "featgen/toy_scenes.h"

namespace featgen {

struct LsrParams {
  double epsilon = 0.0;
  int num_classes = 2;

  void validate() const;
};

// q(k) = 1 - (K-1) eps / K for k == y, eps / K otherwise.
double lsr_weight(int k, int y, const LsrParams& params);

// Per-pixel -sum_k q(k) log p(k) summed over the non-ignored pixels of one
// map. When dlogits is non-null, grad_scale * (p - q) is written into it
// (ignored pixels get 0). Returns the sum; `count` receives the pixel count.
double smoothed_loss_sum(const LogitMap& logits, const LabelMask& gt, double epsilon, Tensor* dlogits,
                         double grad_scale, int64_t* count);

// Mean smoothed loss over every non-ignored pixel of the batch.
// Throws RangeError when the batch has no valid pixel.
double branch_loss(std::span<const LogitMap> logits, std::span<const LabelMask> gts, double epsilon,
                   std::vector<Tensor>* dlogits = nullptr);
// Plain mean -log p(y), computed without the smoothing weights.
double cross_entropy(std::span<const LogitMap> logits, std::span<const LabelMask> gts);

struct BatchComposition {
  int batch_size = 8;
  double real_fraction = 0.7;

  void validate() const;
  int real_count() const;
  int syn_count() const { return batch_size - real_count(); }
};

struct LrSchedule {
  double base_lr = 0.01;
  int max_iter = 1000;
  double power = 0.9;

  void validate() const;
};

// base_lr * (1 - iter / max_iter)^power; throws RangeError outside [0, max_iter].
double poly_lr(int iter, const LrSchedule& schedule);

struct OhnmParams {
  bool enabled = false;
  int pool_size = 64;
  int top_k = 8;
  int refresh_interval = 50;

  void validate() const;
};

// Indices of the top_k largest losses, ties to the lower index, in
// descending loss order. Throws EmptySourceError on no candidates and
// RangeError when top_k exceeds the candidate count.
std::vector<size_t> ohnm_select(std::span<const double> losses, int top_k);

struct OhnmCandidate {
  LabelMask mask;
  double loss = 0.0;
};
std::vector<LabelMask> ohnm_select(std::span<const OhnmCandidate> candidates, int top_k);

struct RealItem {
  const ImageTensor* image = nullptr;
  const LabelMask* mask = nullptr;
  bool flip = false;
};

struct StepReport {
  std::optional<double> real_loss;
  std::optional<double> syn_loss;
  int n_real = 0;
  int n_syn = 0;
  double total() const { return real_loss.value_or(0.0) + syn_loss.value_or(0.0); }
};

// Gradient of branch_loss(D(E(x)), y, q_0) + branch_loss(D(f_syn), y_syn, q_eps).
// The synthetic term reaches only the decoder. Per-sample gradients are
// summed in sample order, so the result does not depend on the thread count.
StepReport compute_mixed_gradients(const SegModel& model, std::span<const RealItem> real,
                                   std::span<const GanSample> syn, double epsilon, GradSet& grads);

// One SGD step on the mixed objective. With no real items the encoder is
// left untouched (no weight decay or momentum either). Throws
// NonFiniteLossError before any update when a loss or gradient is not finite.
StepReport mixed_step(SegModel& model, SgdMomentum& optimizer, std::span<const RealItem> real,
                      std::span<const GanSample> syn, double epsilon, double lr);

ConfusionMatrix evaluate_confusion(const SegModel& model, std::span<const Sample> samples);
MetricBundle evaluate(const SegModel& model, std::span<const Sample> samples);

struct TrainConfig {
  BatchComposition batch;
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double epsilon = 1e-4;
  int eval_interval = 100;
  int log_interval = 10;
  bool hflip = true;
  OhnmParams ohnm;
  uint64_t seed = 11;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EvalRecord {
  int iter = 0;
  MetricBundle metrics;
};

struct TrainResult {
  std::vector<EvalRecord> history;  // iteration 0, then every eval_interval
  MetricBundle final_metrics;
};

using EventSink = std::function<void(const nlohmann::json&)>;

// Supervised training on real data only. Equivalent to train_augmented with
// real_fraction 1.
TrainResult train_baseline(const TrainConfig& config, SegModel& model, std::span<const Sample> train,
                           std::span<const Sample> val, const EventSink& sink = {});

// Mixed real/synthetic training with a frozen generator. Randomness comes
// from independent streams of config.seed: "real" (batch images), "syn"
// (mask crops), "z" (latents) and "ohnm" (candidate pools), so the real
// trajectory matches train_baseline when no synthetic items are drawn.
// Parameters are rounded to f32 after the last step so a saved checkpoint
// reproduces the final metrics exactly.
TrainResult train_augmented(const TrainConfig& config, SegModel& model, const FeatureGan* gan,
                            const MaskSourceConfig* masks, std::span<const Sample> train,
                            std::span<const Sample> val, const EventSink& sink = {});

// Trains the generator on (mask, real feature) patches. Each step draws an
// (A, B) pair from the pool. Returns the report of every step.
std::vector<GanLossReport> train_generator(FeatureGan& gan, std::span<const GanSample> pool,
                                           const GanTrainConfig& config, const EventSink& sink = {},
                                           int log_interval = 50);

}  // namespace featgen
