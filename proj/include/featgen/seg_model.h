#pragma once

#include <cstdint>
#include <json.hpp>
#include <vector>

#include "featgen/layers.h"
#include "featgen/params.h"
#include "featgen/types.h"

namespace featgen {

struct SegModelConfig {
  int num_classes = 5;
  int stride = 8;
  int feature_channels = 64;
  // One entry per encoder conv before the cut; the first runs at full
  // resolution, each later one halves it. Size must equal log2(stride).
  std::vector<int> encoder_widths = {16, 32, 48};
  int decoder_width = 64;
  int decoder_head_width = 32;
  uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static SegModelConfig from_json(const nlohmann::json& j);
};

// Encoder/decoder segmentation network S = D(E(x)) with the cut exposed.
//
// E: conv3x3 (stride 1) then stride-2 convs, ReLU between them; the cut
// feature is the last conv's output before its nonlinearity.
// D: ReLU, conv3x3, ReLU, bilinear x2, conv3x3, ReLU, conv1x1 -> K,
// bilinear x(stride/2). Decoder convs use replicate padding so a
// spatially constant feature decodes to a spatially constant logit map.
class SegModel {
 public:
  struct EncoderTrace {
    std::vector<Tensor> conv_inputs;
    std::vector<Tensor> pre_activations;
  };
  struct DecoderTrace {
    Tensor feature;
    Tensor conv1_out;
    Tensor up_in;
    Tensor up_out;
    Tensor conv2_out;
    Tensor head_in;
    Tensor head_out;
  };

  explicit SegModel(const SegModelConfig& config);

  const SegModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  // Parameters [0, encoder_param_end()) belong to the encoder.
  size_t encoder_param_end() const { return encoder_end_; }
  uint64_t encoder_checksum() const { return params_.checksum(0, encoder_end_); }
  uint64_t decoder_checksum() const { return params_.checksum(encoder_end_); }

  FeatureTensor encode(const ImageTensor& image, EncoderTrace* trace = nullptr) const;
  LogitMap decode(const FeatureTensor& feature, DecoderTrace* trace = nullptr) const;
  LogitMap predict(const ImageTensor& image) const { return decode(encode(image)); }

  // Backpropagates dL/dlogits through D; returns dL/dfeature.
  Tensor decode_backward(const DecoderTrace& trace, const Tensor& dlogits, GradSet* grads) const;
  // Backpropagates dL/dfeature through E; returns dL/dimage when requested.
  Tensor encode_backward(const EncoderTrace& trace, const Tensor& dfeature, GradSet* grads,
                         bool need_input_grad = false) const;

 private:
  SegModelConfig config_;
  ParamSet params_;
  std::vector<Conv2d> encoder_;
  size_t encoder_end_ = 0;
  Conv2d dec_conv1_;
  Conv2d dec_conv2_;
  Conv2d dec_head_;
};

}  // namespace featgen
