#include "featgen/feature_gan.h"

#include <bit>
#include <cmath>

#include "featgen/checkpoint.h"
#include "featgen/errors.h"

namespace featgen {

namespace {

constexpr double kSlope = 0.2;

void check_finite(const char* term, double v) {
  if (!std::isfinite(v)) throw NonFiniteLossError(term, v);
}

AsppConfig aspp_from_json(const nlohmann::json& j, AsppConfig c) {
  c.channels = j.value("channels", c.channels);
  c.dilations = j.value("dilations", c.dilations);
  return c;
}

nlohmann::json aspp_to_json(const AsppConfig& c) { return {{"channels", c.channels}, {"dilations", c.dilations}}; }

void validate_aspp(const AsppConfig& a, int stride, const char* what) {
  if (static_cast<int>(a.channels.size()) != std::countr_zero(static_cast<unsigned>(stride)))
    throw ConfigError(std::string(what) + ": stage count must equal log2(stride)");
  if (a.dilations.empty()) throw ConfigError(std::string(what) + ": needs at least one dilation");
  for (int c : a.channels)
    if (c <= 0) throw ConfigError(std::string(what) + ": channels must be positive");
  for (int d : a.dilations)
    if (d <= 0) throw ConfigError(std::string(what) + ": dilations must be positive");
}

Tensor broadcast(const std::vector<double>& z, int h, int w) {
  Tensor t(static_cast<int>(z.size()), h, w);
  for (int c = 0; c < t.c; ++c)
    for (double& v : t.channel(c)) v = z[c];
  return t;
}

// Mean |a - b| and its gradient with respect to a.
double l1_mean(const Tensor& a, const Tensor& b, Tensor* da, double scale) {
  double acc = 0.0;
  const double inv = 1.0 / static_cast<double>(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += std::fabs(d);
    if (da) da->data[i] += scale * inv * static_cast<double>((d > 0.0) - (d < 0.0));
  }
  return acc * inv;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (num_classes < 2 || num_classes >= kIgnoreLabel) throw ConfigError("generator.num_classes out of range");
  if (stride < 2 || !std::has_single_bit(static_cast<unsigned>(stride)))
    throw ConfigError("generator.stride must be a power of two >= 2");
  if (feature_channels <= 0 || latent_dim <= 0) throw ConfigError("generator channel/latent sizes must be positive");
  validate_aspp(aspp, stride, "generator.aspp");
  validate_aspp(disc_aspp, stride, "generator.disc_aspp");
  if (unet_first_width <= 0 || unet_inner_width <= 0 || unet_depth < 0 || disc_width <= 0 ||
      latent_encoder_width <= 0)
    throw ConfigError("generator network widths must be positive");
  if (weights.l1 < 0.0 || weights.kl < 0.0 || weights.latent < 0.0)
    throw ConfigError("generator loss weights must be >= 0");
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"num_classes", num_classes},
          {"feature_channels", feature_channels},
          {"stride", stride},
          {"latent_dim", latent_dim},
          {"aspp", aspp_to_json(aspp)},
          {"disc_aspp", aspp_to_json(disc_aspp)},
          {"unet_first_width", unet_first_width},
          {"unet_inner_width", unet_inner_width},
          {"unet_depth", unet_depth},
          {"disc_width", disc_width},
          {"latent_encoder_width", latent_encoder_width},
          {"zero_init_disc_head", zero_init_disc_head},
          {"lambda_l1", weights.l1},
          {"lambda_kl", weights.kl},
          {"lambda_latent", weights.latent},
          {"seed", seed}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.num_classes = j.value("num_classes", c.num_classes);
  c.feature_channels = j.value("feature_channels", c.feature_channels);
  c.stride = j.value("stride", c.stride);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  if (j.contains("aspp")) c.aspp = aspp_from_json(j.at("aspp"), c.aspp);
  if (j.contains("disc_aspp")) c.disc_aspp = aspp_from_json(j.at("disc_aspp"), c.disc_aspp);
  c.unet_first_width = j.value("unet_first_width", c.unet_first_width);
  c.unet_inner_width = j.value("unet_inner_width", c.unet_inner_width);
  c.unet_depth = j.value("unet_depth", c.unet_depth);
  c.disc_width = j.value("disc_width", c.disc_width);
  c.latent_encoder_width = j.value("latent_encoder_width", c.latent_encoder_width);
  c.zero_init_disc_head = j.value("zero_init_disc_head", c.zero_init_disc_head);
  c.weights.l1 = j.value("lambda_l1", c.weights.l1);
  c.weights.kl = j.value("lambda_kl", c.weights.kl);
  c.weights.latent = j.value("lambda_latent", c.weights.latent);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------- ASPP

AsppEncoder::AsppEncoder(ParamSet& ps, const std::string& prefix, int in_channels, const AsppConfig& config) {
  int in = in_channels;
  for (size_t s = 0; s < config.channels.size(); ++s) {
    const int out = config.channels[s];
    Stage stage;
    for (int d : config.dilations)
      stage.branches.emplace_back(ps, prefix + ".s" + std::to_string(s) + ".d" + std::to_string(d),
                                  ConvSpec{.in = in, .out = out, .kernel = 3, .dilation = d});
    stage.fuse = Conv2d(ps, prefix + ".s" + std::to_string(s) + ".fuse",
                        ConvSpec{.in = out * static_cast<int>(config.dilations.size()), .out = out, .kernel = 1});
    stages_.push_back(std::move(stage));
    in = out;
  }
  out_channels_ = in;
}

Tensor AsppEncoder::forward(const ParamSet& ps, const Tensor& x, Trace* trace) const {
  if (trace) trace->clear();
  Tensor cur = x;
  for (const Stage& st : stages_) {
    std::vector<Tensor> outs;
    outs.reserve(st.branches.size());
    for (const Conv2d& b : st.branches) outs.push_back(b.forward(ps, cur));
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : outs) ptrs.push_back(&t);
    Tensor branches = concat_channels(ptrs);
    Tensor fused_in = leaky_relu(branches, kSlope);
    Tensor fused_pre = st.fuse.forward(ps, fused_in);
    Tensor next = avg_pool2(leaky_relu(fused_pre, kSlope));
    if (trace)
      trace->push_back(StageTrace{std::move(cur), std::move(branches), std::move(fused_in), std::move(fused_pre)});
    cur = std::move(next);
  }
  return cur;
}

void AsppEncoder::backward(const ParamSet& ps, const Trace& trace, const Tensor& dy, GradSet* grads) const {
  Tensor d = dy;
  for (size_t s = stages_.size(); s-- > 0;) {
    const Stage& st = stages_[s];
    const StageTrace& t = trace[s];
    d = avg_pool2_backward(d);
    d = leaky_relu_backward(t.fused_pre, d, kSlope);
    d = st.fuse.backward(ps, t.fused_in, d, grads);
    d = leaky_relu_backward(t.branches, d, kSlope);
    const std::vector<int> widths(st.branches.size(), st.branches[0].spec().out);
    const auto parts = split_channels(d, widths);
    const bool need_dx = s > 0;
    Tensor dx;
    for (size_t b = 0; b < st.branches.size(); ++b) {
      Tensor g = st.branches[b].backward(ps, t.input, parts[b], grads, need_dx);
      if (!need_dx) continue;
      if (dx.empty())
        dx = std::move(g);
      else
        add_inplace(dx, g);
    }
    d = std::move(dx);
  }
}

Tensor encode_mask(const AsppEncoder& aspp, const ParamSet& ps, const LabelMask& mask, AsppEncoder::Trace* trace) {
  const int s = aspp.total_stride();
  if (mask.height() % s != 0 || mask.width() % s != 0)
    throw ShapeError("encode_mask: mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                     " not divisible by " + std::to_string(s));
  mask.validate();
  return aspp.forward(ps, mask.one_hot(), trace);
}

// ---------------------------------------------------------------- generator

FeatureGenerator::FeatureGenerator(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  aspp_ = AsppEncoder(params_, "gen.aspp", config_.num_classes, config_.aspp);
  auto width = [&](int level) { return level == 0 ? config_.unet_first_width : config_.unet_inner_width; };
  down_.emplace_back(params_, "gen.in",
                     ConvSpec{.in = aspp_.out_channels() + config_.latent_dim, .out = width(0), .kernel = 3});
  for (int l = 1; l <= config_.unet_depth; ++l)
    down_.emplace_back(params_, "gen.down" + std::to_string(l),
                       ConvSpec{.in = width(l - 1), .out = width(l), .kernel = 3, .stride = 2});
  for (int l = 0; l < config_.unet_depth; ++l)
    up_.emplace_back(params_, "gen.up" + std::to_string(l),
                     ConvSpec{.in = width(l + 1) + width(l), .out = width(l), .kernel = 3});
  out_ = Conv2d(params_, "gen.out", ConvSpec{.in = width(0), .out = config_.feature_channels, .kernel = 1});
  std::mt19937_64 rng(config_.seed * 3 + 1);
  init_fan_in_normal(params_, rng);
}

FeatureTensor FeatureGenerator::generate(const LabelMask& mask, const LatentCode& z, Trace* trace) const {
  if (static_cast<int>(z.z.size()) != config_.latent_dim)
    throw RangeError("generate: latent dimension " + std::to_string(z.z.size()) + ", expected " +
                     std::to_string(config_.latent_dim));
  if (mask.num_classes() != config_.num_classes) throw RangeError("generate: mask class count mismatch");
  Trace local;
  Trace& t = trace ? *trace : local;
  const Tensor layout = encode_mask(aspp_, params_, mask, trace ? &t.aspp : nullptr);
  const int cell = 1 << config_.unet_depth;
  if (layout.h % cell != 0 || layout.w % cell != 0)
    throw ShapeError("generate: feature size not divisible by 2^unet_depth");
  const Tensor zmap = broadcast(z.z, layout.h, layout.w);
  const Tensor* parts[] = {&layout, &zmap};
  Tensor cur = concat_channels(parts);

  t.down_in.clear();
  t.down_pre.clear();
  t.up_in.clear();
  t.up_pre.clear();
  std::vector<Tensor> acts;
  for (const Conv2d& conv : down_) {
    Tensor pre = conv.forward(params_, cur);
    acts.push_back(leaky_relu(pre, kSlope));
    if (trace) {
      t.down_in.push_back(std::move(cur));
      t.down_pre.push_back(std::move(pre));
    }
    cur = acts.back();
  }
  t.up_in.resize(up_.size());
  t.up_pre.resize(up_.size());
  for (size_t l = up_.size(); l-- > 0;) {
    const Tensor up = upsample_bilinear(cur, 2);
    const Tensor* cat[] = {&up, &acts[l]};
    Tensor in = concat_channels(cat);
    Tensor pre = up_[l].forward(params_, in);
    cur = leaky_relu(pre, kSlope);
    if (trace) {
      t.up_in[l] = std::move(in);
      t.up_pre[l] = std::move(pre);
    }
  }
  FeatureTensor out{out_.forward(params_, cur), config_.stride, "cut"};
  if (trace) t.out_in = std::move(cur);
  return out;
}

std::vector<double> FeatureGenerator::backward(const Trace& t, const Tensor& dfeature, GradSet* grads) const {
  Tensor d = out_.backward(params_, t.out_in, dfeature, grads);
  std::vector<Tensor> dskip(down_.size());
  for (size_t l = 0; l < up_.size(); ++l) {
    d = leaky_relu_backward(t.up_pre[l], d, kSlope);
    d = up_[l].backward(params_, t.up_in[l], d, grads);
    const int skip_c = up_[l].spec().out;
    const int widths[] = {d.c - skip_c, skip_c};
    auto parts = split_channels(d, widths);
    dskip[l] = std::move(parts[1]);
    d = upsample_bilinear_backward(parts[0], 2, t.up_in[l].h / 2, t.up_in[l].w / 2);
  }
  for (size_t l = down_.size(); l-- > 0;) {
    if (!dskip[l].empty()) add_inplace(d, dskip[l]);
    d = leaky_relu_backward(t.down_pre[l], d, kSlope);
    d = down_[l].backward(params_, t.down_in[l], d, grads);
  }
  const int widths[] = {aspp_.out_channels(), config_.latent_dim};
  const auto parts = split_channels(d, widths);
  aspp_.backward(params_, t.aspp, parts[0], grads);
  std::vector<double> dz(config_.latent_dim, 0.0);
  for (int c = 0; c < config_.latent_dim; ++c)
    for (double v : parts[1].channel(c)) dz[c] += v;
  return dz;
}

// ---------------------------------------------------------------- discriminator

PatchDiscriminator::PatchDiscriminator(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  aspp_ = AsppEncoder(params_, "disc.aspp", config_.num_classes, config_.disc_aspp);
  const int w = config_.disc_width;
  conv1_ = Conv2d(params_, "disc.conv1", ConvSpec{.in = aspp_.out_channels() + config_.feature_channels, .out = w});
  conv2_ = Conv2d(params_, "disc.conv2", ConvSpec{.in = w, .out = w, .stride = 2});
  head_ = Conv2d(params_, "disc.head", ConvSpec{.in = w, .out = 1});
  std::mt19937_64 rng(config_.seed * 3 + 2);
  init_fan_in_normal(params_, rng);
  if (config_.zero_init_disc_head) {
    auto& hw = params_[head_.weight_index()].value;
    std::fill(hw.begin(), hw.end(), 0.0);
  }
}

Tensor PatchDiscriminator::encode_layout(const LabelMask& mask, AsppEncoder::Trace* trace) const {
  return encode_mask(aspp_, params_, mask, trace);
}

Tensor PatchDiscriminator::score(const Tensor& layout, const FeatureTensor& feature, HeadTrace* trace) const {
  if (feature.data.h != layout.h || feature.data.w != layout.w)
    throw ShapeError("discriminate: feature " + feature.data.shape_str() + " does not match layout " +
                     layout.shape_str());
  if (feature.data.c != config_.feature_channels) throw ShapeError("discriminate: feature channel mismatch");
  const Tensor* parts[] = {&layout, &feature.data};
  Tensor in = concat_channels(parts);
  Tensor pre1 = conv1_.forward(params_, in);
  Tensor pre2 = conv2_.forward(params_, leaky_relu(pre1, kSlope));
  Tensor in3 = leaky_relu(pre2, kSlope);
  Tensor out = head_.forward(params_, in3);
  if (trace) *trace = HeadTrace{std::move(in), std::move(pre1), std::move(pre2), std::move(in3)};
  return out;
}

std::pair<Tensor, Tensor> PatchDiscriminator::score_backward(const HeadTrace& t, const Tensor& dscore,
                                                             GradSet* grads) const {
  Tensor d = head_.backward(params_, t.in3, dscore, grads);
  d = leaky_relu_backward(t.pre2, d, kSlope);
  d = conv2_.backward(params_, leaky_relu(t.pre1, kSlope), d, grads);
  d = leaky_relu_backward(t.pre1, d, kSlope);
  d = conv1_.backward(params_, t.input, d, grads);
  const int widths[] = {aspp_.out_channels(), config_.feature_channels};
  auto parts = split_channels(d, widths);
  return {std::move(parts[0]), std::move(parts[1])};
}

void PatchDiscriminator::layout_backward(const AsppEncoder::Trace& trace, const Tensor& dlayout,
                                         GradSet* grads) const {
  aspp_.backward(params_, trace, dlayout, grads);
}

Tensor PatchDiscriminator::discriminate(const LabelMask& mask, const FeatureTensor& feature) const {
  if (mask.height() != feature.data.h * config_.stride || mask.width() != feature.data.w * config_.stride)
    throw ShapeError("discriminate: mask/feature size mismatch");
  return score(encode_layout(mask), feature);
}

// ---------------------------------------------------------------- latent encoder

LatentEncoder::LatentEncoder(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  const int w = config_.latent_encoder_width;
  conv1_ = Conv2d(params_, "enc.conv1", ConvSpec{.in = config_.feature_channels, .out = w, .stride = 2});
  conv2_ = Conv2d(params_, "enc.conv2", ConvSpec{.in = w, .out = w, .stride = 2});
  head_ = Conv2d(params_, "enc.head", ConvSpec{.in = w, .out = 2 * config_.latent_dim, .kernel = 1});
  std::mt19937_64 rng(config_.seed * 3 + 3);
  init_fan_in_normal(params_, rng);
}

LatentEncoder::Output LatentEncoder::encode(const FeatureTensor& feature, Trace* trace) const {
  if (feature.data.c != config_.feature_channels)
    throw ShapeError("encode_latent: expected " + std::to_string(config_.feature_channels) + " channels, got " +
                     feature.data.shape_str());
  Tensor pre1 = conv1_.forward(params_, feature.data);
  Tensor pre2 = conv2_.forward(params_, leaky_relu(pre1, kSlope));
  Tensor pooled_in = leaky_relu(pre2, kSlope);
  Tensor pooled = global_avg_pool(pooled_in);
  const Tensor out = head_.forward(params_, pooled);
  const int d = config_.latent_dim;
  Output o{std::vector<double>(out.data.begin(), out.data.begin() + d),
           std::vector<double>(out.data.begin() + d, out.data.end())};
  if (trace) *trace = Trace{feature.data, std::move(pre1), std::move(pre2), std::move(pooled_in), std::move(pooled)};
  return o;
}

Tensor LatentEncoder::backward(const Trace& t, const std::vector<double>& dmu, const std::vector<double>& dlogvar,
                               GradSet* grads) const {
  const int d = config_.latent_dim;
  Tensor dout(2 * d, 1, 1);
  for (int i = 0; i < d; ++i) {
    dout.data[i] = dmu[i];
    dout.data[d + i] = dlogvar[i];
  }
  Tensor g = head_.backward(params_, t.pooled, dout, grads);
  g = global_avg_pool_backward(g, t.pooled_in.h, t.pooled_in.w);
  g = leaky_relu_backward(t.pre2, g, kSlope);
  g = conv2_.backward(params_, leaky_relu(t.pre1, kSlope), g, grads);
  g = leaky_relu_backward(t.pre1, g, kSlope);
  return conv1_.backward(params_, t.input, g, grads);
}

LatentCode reparameterize(const LatentEncoder::Output& stats, const std::vector<double>& noise) {
  LatentCode z{std::vector<double>(stats.mu.size())};
  for (size_t i = 0; i < z.z.size(); ++i) z.z[i] = stats.mu[i] + std::exp(0.5 * stats.logvar[i]) * noise[i];
  return z;
}

double kl_divergence(const std::vector<double>& mu, const std::vector<double>& logvar) {
  double kl = 0.0;
  for (size_t i = 0; i < mu.size(); ++i) kl += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
  return 0.5 * kl;
}

double bce_with_logits(const Tensor& logits, double target, Tensor* dlogits) {
  const double inv = 1.0 / static_cast<double>(logits.size());
  if (dlogits) *dlogits = Tensor(logits.c, logits.h, logits.w);
  double acc = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    const double s = logits.data[i];
    acc += std::max(s, 0.0) + std::log1p(std::exp(-std::fabs(s))) - target * s;
    if (dlogits) dlogits->data[i] = (1.0 / (1.0 + std::exp(-s)) - target) * inv;
  }
  return acc * inv;
}

nlohmann::json GanLossReport::to_json() const {
  return {{"adv_g", adv_g}, {"adv_d", adv_d}, {"l1_recon", l1_recon}, {"kl", kl}, {"latent_recon", latent_recon}};
}

// ---------------------------------------------------------------- objective

FeatureGan::FeatureGan(const GeneratorConfig& config) : config_(config), gen_(config), disc_(config), enc_(config) {}

LatentCode FeatureGan::sample_latent(std::mt19937_64& rng) const {
  std::normal_distribution<double> n(0.0, 1.0);
  LatentCode z{std::vector<double>(config_.latent_dim)};
  for (double& v : z.z) v = n(rng);
  return z;
}

GanNoise FeatureGan::sample_noise(std::mt19937_64& rng) const {
  GanNoise noise;
  noise.vae_noise = sample_latent(rng).z;
  noise.random_z = sample_latent(rng).z;
  return noise;
}

FeatureGan::ForwardPass FeatureGan::forward(const GanSample& a, const GanSample& b, const GanNoise& noise) const {
  ForwardPass p;
  p.stats = enc_.encode(a.feature, &p.enc_trace);
  p.vae_noise = noise.vae_noise;
  p.z_encoded = reparameterize(p.stats, noise.vae_noise);
  p.fake_a = gen_.generate(a.mask, p.z_encoded, &p.gen_trace_a);
  p.z_random = LatentCode{noise.random_z};
  p.fake_b = gen_.generate(b.mask, p.z_random, &p.gen_trace_b);
  return p;
}

double FeatureGan::discriminator_loss(const GanSample& a, const GanSample& b, const FeatureTensor& fake_a,
                                      const FeatureTensor& fake_b, GradSet* disc_grads) const {
  double total = 0.0;
  for (const auto& [sample, fake] : {std::pair{&a, &fake_a}, std::pair{&b, &fake_b}}) {
    AsppEncoder::Trace layout_trace;
    const Tensor layout = disc_.encode_layout(sample->mask, disc_grads ? &layout_trace : nullptr);
    PatchDiscriminator::HeadTrace real_trace, fake_trace;
    Tensor d_real, d_fake;
    const Tensor real_score = disc_.score(layout, sample->feature, &real_trace);
    const Tensor fake_score = disc_.score(layout, *fake, &fake_trace);
    total += bce_with_logits(real_score, 1.0, disc_grads ? &d_real : nullptr);
    total += bce_with_logits(fake_score, 0.0, disc_grads ? &d_fake : nullptr);
    if (!disc_grads) continue;
    // adv_d averages four terms
    scale_inplace(d_real, 0.25);
    scale_inplace(d_fake, 0.25);
    Tensor dlayout = disc_.score_backward(real_trace, d_real, disc_grads).first;
    add_inplace(dlayout, disc_.score_backward(fake_trace, d_fake, disc_grads).first);
    disc_.layout_backward(layout_trace, dlayout, disc_grads);
  }
  return 0.25 * total;
}

GanLossReport FeatureGan::generator_loss(const ForwardPass& p, const GanSample& a, const GanSample& b,
                                         const GanLossWeights& w, GradSet* gen_grads, GradSet* enc_grads) const {
  const bool want_grads = gen_grads != nullptr || enc_grads != nullptr;
  GanLossReport r;
  Tensor dfake_a(p.fake_a.data.c, p.fake_a.data.h, p.fake_a.data.w);
  Tensor dfake_b(p.fake_b.data.c, p.fake_b.data.h, p.fake_b.data.w);

  // Non-saturating adversarial term, averaged over both branches.
  for (const auto& [mask, fake, dfake] :
       {std::tuple{&a.mask, &p.fake_a, &dfake_a}, std::tuple{&b.mask, &p.fake_b, &dfake_b}}) {
    PatchDiscriminator::HeadTrace trace;
    const Tensor score = disc_.score(disc_.encode_layout(*mask), *fake, &trace);
    Tensor dscore;
    r.adv_g += 0.5 * bce_with_logits(score, 1.0, want_grads ? &dscore : nullptr);
    if (!want_grads) continue;
    scale_inplace(dscore, 0.5);
    add_inplace(*dfake, disc_.score_backward(trace, dscore, nullptr).second);
  }

  r.l1_recon = l1_mean(p.fake_a.data, a.feature.data, want_grads ? &dfake_a : nullptr, w.l1);
  r.kl = kl_divergence(p.stats.mu, p.stats.logvar);

  LatentEncoder::Trace recon_trace;
  const auto recon = enc_.encode(p.fake_b, &recon_trace);
  const size_t d = recon.mu.size();
  std::vector<double> dmu_recon(d, 0.0);
  for (size_t i = 0; i < d; ++i) {
    const double diff = recon.mu[i] - p.z_random.z[i];
    r.latent_recon += std::fabs(diff) / static_cast<double>(d);
    dmu_recon[i] = w.latent * static_cast<double>((diff > 0.0) - (diff < 0.0)) / static_cast<double>(d);
  }
  if (!want_grads) return r;

  // The latent reconstruction trains the generator only.
  add_inplace(dfake_b, enc_.backward(recon_trace, dmu_recon, std::vector<double>(d, 0.0), nullptr));

  const std::vector<double> dz_a = gen_.backward(p.gen_trace_a, dfake_a, gen_grads);
  gen_.backward(p.gen_trace_b, dfake_b, gen_grads);

  std::vector<double> dmu(d), dlogvar(d);
  for (size_t i = 0; i < d; ++i) {
    const double sigma = std::exp(0.5 * p.stats.logvar[i]);
    dmu[i] = w.kl * p.stats.mu[i] + dz_a[i];
    dlogvar[i] = w.kl * 0.5 * (std::exp(p.stats.logvar[i]) - 1.0) + dz_a[i] * p.vae_noise[i] * 0.5 * sigma;
  }
  enc_.backward(p.enc_trace, dmu, dlogvar, enc_grads);
  return r;
}

void FeatureGan::save(const std::filesystem::path& path) const {
  const ParamSet* sets[] = {&gen_.params(), &disc_.params(), &enc_.params()};
  save_checkpoint(path, {{"kind", "feature_gan"}, {"config", config_.to_json()}}, sets);
}

FeatureGan FeatureGan::load(const std::filesystem::path& path) {
  const auto meta = read_checkpoint_metadata(path);
  if (meta.value("kind", "") != "feature_gan") throw IoError(path.string() + " is not a generator checkpoint");
  FeatureGan gan(GeneratorConfig::from_json(meta.at("config")));
  ParamSet* sets[] = {&gan.gen_.params(), &gan.disc_.params(), &gan.enc_.params()};
  load_checkpoint_params(path, sets);
  return gan;
}

// ---------------------------------------------------------------- training

GanTrainer::GanTrainer(FeatureGan& gan, const GanTrainConfig& config)
    : gan_(gan),
      config_(config),
      opt_gen_(gan.generator().params(), config.lr, config.beta1, config.beta2),
      opt_disc_(gan.discriminator().params(), config.lr, config.beta1, config.beta2),
      opt_enc_(gan.latent_encoder().params(), config.lr, config.beta1, config.beta2),
      rng_(config.seed) {}

GanLossReport GanTrainer::step(const GanSample& a, const GanSample& b) {
  const GanNoise noise = gan_.sample_noise(rng_);
  const FeatureGan::ForwardPass pass = gan_.forward(a, b, noise);

  GradSet disc_grads(gan_.discriminator().params());
  const double adv_d = gan_.discriminator_loss(a, b, pass.fake_a, pass.fake_b, &disc_grads);
  check_finite("adv_d", adv_d);
  if (!disc_grads.all_finite()) throw NonFiniteLossError("discriminator_gradient", NAN);
  // The generator loss sees the updated discriminator; keep the old state
  // so a non-finite generator term leaves every network untouched.
  const ParamSet disc_before = gan_.discriminator().params();
  const Adam opt_disc_before = opt_disc_;
  opt_disc_.step(gan_.discriminator().params(), disc_grads);
  auto fail = [&](const char* term, double value) {
    gan_.discriminator().params() = disc_before;
    opt_disc_ = opt_disc_before;
    throw NonFiniteLossError(term, value);
  };

  GradSet gen_grads(gan_.generator().params());
  GradSet enc_grads(gan_.latent_encoder().params());
  GanLossReport r = gan_.generator_loss(pass, a, b, gan_.config().weights, &gen_grads, &enc_grads);
  r.adv_d = adv_d;
  for (const auto& [term, value] : {std::pair{"adv_g", r.adv_g}, std::pair{"l1_recon", r.l1_recon},
                                     std::pair{"kl", r.kl}, std::pair{"latent_recon", r.latent_recon}})
    if (!std::isfinite(value)) fail(term, value);
  if (!gen_grads.all_finite() || !enc_grads.all_finite()) fail("generator_gradient", NAN);
  opt_gen_.step(gan_.generator().params(), gen_grads);
  opt_enc_.step(gan_.latent_encoder().params(), enc_grads);
  return r;
}

GanLossReport gan_training_step(GanTrainer& trainer, const GanSample& a, const GanSample& b) {
  return trainer.step(a, b);
}

}  // namespace featgen
