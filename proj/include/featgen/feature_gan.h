#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <random>
#include <vector>

#include "featgen/layers.h"
#include "featgen/params.h"
#include "featgen/types.h"

namespace featgen {

struct LatentCode {
  std::vector<double> z;
};

struct AsppConfig {
  // Output channels per stage. Each stage halves the resolution, so the
  // stage count must equal log2(mask-to-feature stride).
  std::vector<int> channels = {24, 48, 96};
  std::vector<int> dilations = {1, 2, 4};
};

struct GanLossWeights {
  double l1 = 10.0;
  double kl = 0.01;
  double latent = 0.5;
};

struct GeneratorConfig {
  int num_classes = 5;
  int feature_channels = 64;  // C at the segmentation cut
  int stride = 8;             // s at the segmentation cut
  int latent_dim = 8;
  AsppConfig aspp;
  AsppConfig disc_aspp = {{12, 24, 48}, {1, 2, 4}};
  // First U-Net conv width. The reference generator uses 1320 for a
  // 1024-channel feature; the toy scales it by feature_channels / 1024.
  int unet_first_width = 83;
  int unet_inner_width = 128;
  int unet_depth = 2;
  int disc_width = 64;
  int latent_encoder_width = 64;
  bool zero_init_disc_head = true;
  GanLossWeights weights;
  uint64_t seed = 3;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

// Mask encoder shared by the generator and the discriminator: per stage,
// parallel 3x3 convs at each dilation, concatenated, LeakyReLU, fused by a
// 1x1 conv, LeakyReLU, then 2x2 average pooling.
class AsppEncoder {
 public:
  struct StageTrace {
    Tensor input;
    Tensor branches;  // concatenated pre-activation branch outputs
    Tensor fused_in;
    Tensor fused_pre;
  };
  using Trace = std::vector<StageTrace>;

  AsppEncoder() = default;
  AsppEncoder(ParamSet& ps, const std::string& prefix, int in_channels, const AsppConfig& config);

  int out_channels() const { return out_channels_; }
  int total_stride() const { return 1 << static_cast<int>(stages_.size()); }
  Tensor forward(const ParamSet& ps, const Tensor& x, Trace* trace = nullptr) const;
  void backward(const ParamSet& ps, const Trace& trace, const Tensor& dy, GradSet* grads) const;

 private:
  struct Stage {
    std::vector<Conv2d> branches;
    Conv2d fuse;
  };
  std::vector<Stage> stages_;
  int out_channels_ = 0;
};

// ASPP-encodes a one-hot mask to feature resolution. Throws ShapeError when
// the mask size is not divisible by the encoder stride.
Tensor encode_mask(const AsppEncoder& aspp, const ParamSet& ps, const LabelMask& mask,
                   AsppEncoder::Trace* trace = nullptr);

class FeatureGenerator {
 public:
  struct Trace {
    AsppEncoder::Trace aspp;
    Tensor unet_input;
    std::vector<Tensor> down_in, down_pre;  // per level, including the input conv
    std::vector<Tensor> up_in, up_pre;
    std::vector<int> up_split;  // channels of the upsampled part of each up-conv input
    Tensor out_in;
  };

  explicit FeatureGenerator(const GeneratorConfig& config);
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  FeatureTensor generate(const LabelMask& mask, const LatentCode& z, Trace* trace = nullptr) const;
  // Returns dL/dz (summed over the spatial broadcast).
  std::vector<double> backward(const Trace& trace, const Tensor& dfeature, GradSet* grads) const;

 private:
  GeneratorConfig config_;
  ParamSet params_;
  AsppEncoder aspp_;
  std::vector<Conv2d> down_;  // down_[0] is the input conv at feature resolution
  std::vector<Conv2d> up_;    // up_[i] restores the resolution of down_[i]
  Conv2d out_;
};

class PatchDiscriminator {
 public:
  struct HeadTrace {
    Tensor input;
    Tensor pre1, pre2, in3;
  };

  explicit PatchDiscriminator(const GeneratorConfig& config);
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Tensor encode_layout(const LabelMask& mask, AsppEncoder::Trace* trace = nullptr) const;
  // Scores a (layout encoding, feature) pair: (h/2) x (w/2) map of logits.
  Tensor score(const Tensor& layout, const FeatureTensor& feature, HeadTrace* trace = nullptr) const;
  // Returns (dL/dlayout, dL/dfeature).
  std::pair<Tensor, Tensor> score_backward(const HeadTrace& trace, const Tensor& dscore, GradSet* grads) const;
  void layout_backward(const AsppEncoder::Trace& trace, const Tensor& dlayout, GradSet* grads) const;

  Tensor discriminate(const LabelMask& mask, const FeatureTensor& feature) const;

 private:
  GeneratorConfig config_;
  ParamSet params_;
  AsppEncoder aspp_;
  Conv2d conv1_, conv2_, head_;
};

class LatentEncoder {
 public:
  struct Trace {
    Tensor input;
    Tensor pre1, pre2, pooled_in, pooled;
  };
  struct Output {
    std::vector<double> mu;
    std::vector<double> logvar;
  };

  explicit LatentEncoder(const GeneratorConfig& config);
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Output encode(const FeatureTensor& feature, Trace* trace = nullptr) const;
  // Returns dL/dfeature.
  Tensor backward(const Trace& trace, const std::vector<double>& dmu, const std::vector<double>& dlogvar,
                  GradSet* grads) const;

 private:
  GeneratorConfig config_;
  ParamSet params_;
  Conv2d conv1_, conv2_, head_;
};

// z = mu + exp(logvar / 2) * noise
LatentCode reparameterize(const LatentEncoder::Output& stats, const std::vector<double>& noise);
// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)
double kl_divergence(const std::vector<double>& mu, const std::vector<double>& logvar);
// Mean sigmoid cross-entropy of logits against a constant target in {0, 1}.
double bce_with_logits(const Tensor& logits, double target, Tensor* dlogits);

struct GanLossReport {
  double adv_g = 0.0;
  double adv_d = 0.0;
  double l1_recon = 0.0;
  double kl = 0.0;
  double latent_recon = 0.0;

  nlohmann::json to_json() const;
};

struct GanSample {
  LabelMask mask;
  FeatureTensor feature;
};

// Per-step randomness: cVAE reparameterization noise and the cLR latent.
struct GanNoise {
  std::vector<double> vae_noise;
  std::vector<double> random_z;
};

// Generator, discriminator and latent encoder trained with the
// cVAE + cLR objective. Sample A drives the cVAE branch, sample B the cLR branch.
class FeatureGan {
 public:
  struct ForwardPass {
    LatentEncoder::Trace enc_trace;
    LatentEncoder::Output stats;
    std::vector<double> vae_noise;
    LatentCode z_encoded;
    FeatureGenerator::Trace gen_trace_a;
    FeatureTensor fake_a;
    LatentCode z_random;
    FeatureGenerator::Trace gen_trace_b;
    FeatureTensor fake_b;
  };

  explicit FeatureGan(const GeneratorConfig& config);

  const GeneratorConfig& config() const { return config_; }
  FeatureGenerator& generator() { return gen_; }
  const FeatureGenerator& generator() const { return gen_; }
  PatchDiscriminator& discriminator() { return disc_; }
  const PatchDiscriminator& discriminator() const { return disc_; }
  LatentEncoder& latent_encoder() { return enc_; }
  const LatentEncoder& latent_encoder() const { return enc_; }

  FeatureTensor generate(const LabelMask& mask, const LatentCode& z) const { return gen_.generate(mask, z); }
  LatentCode sample_latent(std::mt19937_64& rng) const;
  GanNoise sample_noise(std::mt19937_64& rng) const;

  ForwardPass forward(const GanSample& a, const GanSample& b, const GanNoise& noise) const;
  // adv_d with gradients for the discriminator; fakes are treated as constants.
  double discriminator_loss(const GanSample& a, const GanSample& b, const FeatureTensor& fake_a,
                            const FeatureTensor& fake_b, GradSet* disc_grads) const;
  // adv_g, l1_recon, kl and latent_recon against the current discriminator.
  // The objective is adv_g + w.l1 * l1 + w.kl * kl + w.latent * latent; the
  // latent term updates the generator only.
  GanLossReport generator_loss(const ForwardPass& pass, const GanSample& a, const GanSample& b,
                               const GanLossWeights& w, GradSet* gen_grads, GradSet* enc_grads) const;

  void save(const std::filesystem::path& path) const;
  static FeatureGan load(const std::filesystem::path& path);

 private:
  GeneratorConfig config_;
  FeatureGenerator gen_;
  PatchDiscriminator disc_;
  LatentEncoder enc_;
};

struct GanTrainConfig {
  int steps = 2000;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  uint64_t seed = 5;
};

// One alternating update per call: discriminator on real vs. both fakes,
// then generator and latent encoder. Throws NonFiniteLossError (naming the
// term) before touching any parameter if a loss is not finite.
class GanTrainer {
 public:
  GanTrainer(FeatureGan& gan, const GanTrainConfig& config);
  GanLossReport step(const GanSample& a, const GanSample& b);
  std::mt19937_64& rng() { return rng_; }

 private:
  FeatureGan& gan_;
  GanTrainConfig config_;
  Adam opt_gen_, opt_disc_, opt_enc_;
  std::mt19937_64 rng_;
};

GanLossReport gan_training_step(GanTrainer& trainer, const GanSample& a, const GanSample& b);

}  // namespace featgen
