#include "featgen/seg_model.h"

#include <bit>
#include <random>

#include "featgen/errors.h"

namespace featgen {

void SegModelConfig::validate() const {
  if (num_classes < 2 || num_classes >= kIgnoreLabel) throw ConfigError("model.num_classes must be in [2, 254]");
  if (stride < 2 || !std::has_single_bit(static_cast<unsigned>(stride)))
    throw ConfigError("model.stride must be a power of two >= 2");
  if (feature_channels < num_classes) throw ConfigError("model.feature_channels must be >= num_classes");
  if (static_cast<int>(encoder_widths.size()) != std::countr_zero(static_cast<unsigned>(stride)))
    throw ConfigError("model.encoder_widths must have log2(stride) entries");
  for (int w : encoder_widths)
    if (w <= 0) throw ConfigError("model.encoder_widths entries must be positive");
  if (decoder_width <= 0 || decoder_head_width <= 0) throw ConfigError("model decoder widths must be positive");
}

nlohmann::json SegModelConfig::to_json() const {
  return {{"num_classes", num_classes},       {"stride", stride},
          {"feature_channels", feature_channels}, {"encoder_widths", encoder_widths},
          {"decoder_width", decoder_width},   {"decoder_head_width", decoder_head_width},
          {"seed", seed}};
}

SegModelConfig SegModelConfig::from_json(const nlohmann::json& j) {
  SegModelConfig c;
  c.num_classes = j.value("num_classes", c.num_classes);
  c.stride = j.value("stride", c.stride);
  c.feature_channels = j.value("feature_channels", c.feature_channels);
  c.encoder_widths = j.value("encoder_widths", c.encoder_widths);
  c.decoder_width = j.value("decoder_width", c.decoder_width);
  c.decoder_head_width = j.value("decoder_head_width", c.decoder_head_width);
  c.seed = j.value("seed", c.seed);
  return c;
}

SegModel::SegModel(const SegModelConfig& config) : config_(config) {
  config_.validate();
  int in = 3;
  for (size_t i = 0; i < config_.encoder_widths.size(); ++i) {
    const int out = config_.encoder_widths[i];
    encoder_.emplace_back(params_, "enc" + std::to_string(i),
                          ConvSpec{.in = in, .out = out, .kernel = 3, .stride = i == 0 ? 1 : 2});
    in = out;
  }
  encoder_.emplace_back(params_, "enc_cut", ConvSpec{.in = in, .out = config_.feature_channels, .kernel = 3, .stride = 2});
  encoder_end_ = params_.size();

  dec_conv1_ = Conv2d(params_, "dec1", ConvSpec{.in = config_.feature_channels, .out = config_.decoder_width,
                                                .padding = Padding::kReplicate});
  dec_conv2_ = Conv2d(params_, "dec2", ConvSpec{.in = config_.decoder_width, .out = config_.decoder_head_width,
                                                .padding = Padding::kReplicate});
  dec_head_ = Conv2d(params_, "dec_head",
                     ConvSpec{.in = config_.decoder_head_width, .out = config_.num_classes, .kernel = 1});

  std::mt19937_64 rng(config_.seed);
  init_fan_in_normal(params_, rng);
}

FeatureTensor SegModel::encode(const ImageTensor& image, EncoderTrace* trace) const {
  image.validate();
  const int s = config_.stride;
  if (image.height() % s != 0 || image.width() % s != 0)
    throw ShapeError("encode: image " + image.data.shape_str() + " not divisible by stride " + std::to_string(s));
  if (trace) {
    trace->conv_inputs.clear();
    trace->pre_activations.clear();
  }
  Tensor x = image.data;
  for (size_t i = 0; i < encoder_.size(); ++i) {
    Tensor z = encoder_[i].forward(params_, x);
    if (trace) trace->conv_inputs.push_back(std::move(x));
    if (i + 1 == encoder_.size()) return FeatureTensor{std::move(z), s, "cut"};
    x = relu(z);
    if (trace) trace->pre_activations.push_back(std::move(z));
  }
  return {};
}

LogitMap SegModel::decode(const FeatureTensor& feature, DecoderTrace* trace) const {
  const Tensor& f = feature.data;
  if (f.c != config_.feature_channels)
    throw ShapeError("decode: expected " + std::to_string(config_.feature_channels) + " channels, got " +
                     f.shape_str());
  Tensor z1 = dec_conv1_.forward(params_, relu(f));
  Tensor up_in = relu(z1);
  Tensor up_out = upsample_bilinear(up_in, 2);
  Tensor z2 = dec_conv2_.forward(params_, up_out);
  Tensor head_in = relu(z2);
  Tensor head_out = dec_head_.forward(params_, head_in);
  LogitMap out{upsample_bilinear(head_out, config_.stride / 2)};
  if (trace) *trace = DecoderTrace{f, std::move(z1), std::move(up_in), std::move(up_out), std::move(z2),
                                   std::move(head_in), std::move(head_out)};
  return out;
}

Tensor SegModel::decode_backward(const DecoderTrace& t, const Tensor& dlogits, GradSet* grads) const {
  Tensor d = upsample_bilinear_backward(dlogits, config_.stride / 2, t.head_out.h, t.head_out.w);
  d = dec_head_.backward(params_, t.head_in, d, grads);
  d = relu_backward(t.conv2_out, d);
  d = dec_conv2_.backward(params_, t.up_out, d, grads);
  d = upsample_bilinear_backward(d, 2, t.up_in.h, t.up_in.w);
  d = relu_backward(t.conv1_out, d);
  d = dec_conv1_.backward(params_, relu(t.feature), d, grads);
  return relu_backward(t.feature, d);
}

Tensor SegModel::encode_backward(const EncoderTrace& t, const Tensor& dfeature, GradSet* grads,
                                 bool need_input_grad) const {
  Tensor d = dfeature;
  for (size_t i = encoder_.size(); i-- > 0;) {
    const bool need_dx = i > 0 || need_input_grad;
    d = encoder_[i].backward(params_, t.conv_inputs[i], d, grads, need_dx);
    if (i > 0) d = relu_backward(t.pre_activations[i - 1], d);
  }
  return d;
}

}  // namespace featgen
