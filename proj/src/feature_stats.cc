#include "featgen/feature_stats.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "featgen/errors.h"
#include "featgen/netpbm.h"
#include "featgen/runtime.h"

namespace featgen {

FeatureTensor normalize_to_ball(const FeatureTensor& patch, double radius) {
  const double norm = l2_norm(patch.data);
  if (!(norm > 0.0)) throw RangeError("normalize_to_ball: patch has zero norm");
  FeatureTensor out = patch;
  scale_inplace(out.data, radius / norm);
  return out;
}

int64_t FeatureHistogram::cell_total(int k, int c) const {
  int64_t t = 0;
  for (int64_t v : cell(k, c)) t += v;
  return t;
}

namespace {

LabelMask mask_at_feature_resolution(const LabelMask& mask, const Tensor& f) {
  if (mask.height() == f.h && mask.width() == f.w) return mask;
  if (mask.height() % f.h != 0 || mask.height() / f.h != mask.width() / f.w || mask.width() % f.w != 0)
    throw ShapeError("mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                     " does not align with feature " + f.shape_str());
  return mask.downsample_majority(mask.height() / f.h);
}

}  // namespace

FeatureHistogram build_histograms(std::span<const FeatureTensor> features, std::span<const LabelMask> masks,
                                  int bins, double radius) {
  if (features.size() != masks.size()) throw ShapeError("build_histograms: feature/mask count mismatch");
  if (features.empty()) throw RangeError("build_histograms: no features");
  if (bins <= 0) throw RangeError("build_histograms: bins must be positive");
  FeatureHistogram h;
  h.num_classes = masks[0].num_classes();
  h.channels = features[0].data.c;
  h.bins = bins;

  std::vector<FeatureTensor> norm;
  std::vector<LabelMask> small;
  for (size_t i = 0; i < features.size(); ++i) {
    if (features[i].data.c != h.channels) throw ShapeError("build_histograms: channel count differs");
    norm.push_back(normalize_to_ball(features[i], radius));
    small.push_back(mask_at_feature_resolution(masks[i], features[i].data));
  }

  h.lo.assign(h.channels, std::numeric_limits<double>::infinity());
  h.hi.assign(h.channels, -std::numeric_limits<double>::infinity());
  for (size_t i = 0; i < norm.size(); ++i)
    for (int c = 0; c < h.channels; ++c) {
      const auto ch = norm[i].data.channel(c);
      for (size_t p = 0; p < ch.size(); ++p) {
        if (small[i].labels()[p] == kIgnoreLabel) continue;
        h.lo[c] = std::min(h.lo[c], ch[p]);
        h.hi[c] = std::max(h.hi[c], ch[p]);
      }
    }

  h.counts.assign(static_cast<size_t>(h.num_classes) * h.channels * bins, 0);
  for (size_t i = 0; i < norm.size(); ++i)
    for (int c = 0; c < h.channels; ++c) {
      const auto ch = norm[i].data.channel(c);
      const double width = h.hi[c] - h.lo[c];
      for (size_t p = 0; p < ch.size(); ++p) {
        const uint8_t k = small[i].labels()[p];
        if (k == kIgnoreLabel) continue;
        int b = width > 0.0 ? static_cast<int>((ch[p] - h.lo[c]) / width * bins) : 0;
        b = std::clamp(b, 0, bins - 1);
        ++h.counts[(static_cast<size_t>(k) * h.channels + c) * bins + b];
      }
    }
  return h;
}

EntropyTable class_channel_entropy(const FeatureHistogram& hist) {
  EntropyTable t;
  t.num_classes = hist.num_classes;
  t.channels = hist.channels;
  t.entropy.assign(static_cast<size_t>(hist.num_classes) * hist.channels, std::nullopt);
  double sum = 0.0;
  int cells = 0;
  for (int k = 0; k < hist.num_classes; ++k)
    for (int c = 0; c < hist.channels; ++c) {
      const int64_t total = hist.cell_total(k, c);
      if (total == 0) continue;
      double e = 0.0;
      for (int64_t n : hist.cell(k, c))
        if (n > 0) {
          const double p = static_cast<double>(n) / static_cast<double>(total);
          e -= p * std::log2(p);
        }
      t.entropy[static_cast<size_t>(k) * hist.channels + c] = e;
      sum += e;
      ++cells;
    }
  if (cells == 0) throw RangeError("class_channel_entropy: no activation falls in any class");
  t.mean = sum / cells;
  return t;
}

EntropyTable class_channel_entropy(std::span<const FeatureTensor> features, std::span<const LabelMask> masks,
                                   int bins, double radius) {
  return class_channel_entropy(build_histograms(features, masks, bins, radius));
}

double hist_iou(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("hist_iou: histograms have different bin counts");
  double sa = 0.0, sb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0.0 || b[i] < 0.0) throw RangeError("hist_iou: negative bin");
    sa += a[i];
    sb += b[i];
  }
  if (!(sa > 0.0) || !(sb > 0.0)) throw RangeError("hist_iou: empty histogram");
  double mn = 0.0, mx = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double x = a[i] / sa, y = b[i] / sb;
    mn += std::min(x, y);
    mx += std::max(x, y);
  }
  return mn / mx;
}

double hist_iou(std::span<const int64_t> a, std::span<const int64_t> b) {
  const std::vector<double> da(a.begin(), a.end()), db(b.begin(), b.end());
  return hist_iou(da, db);
}

double mean_hist_iou(const FeatureHistogram& hist) {
  double total = 0.0;
  int channels = 0;
  for (int c = 0; c < hist.channels; ++c) {
    double sum = 0.0;
    int pairs = 0;
    for (int a = 0; a < hist.num_classes; ++a) {
      if (hist.cell_total(a, c) == 0) continue;
      for (int b = a + 1; b < hist.num_classes; ++b) {
        if (hist.cell_total(b, c) == 0) continue;
        sum += hist_iou(hist.cell(a, c), hist.cell(b, c));
        ++pairs;
      }
    }
    if (pairs == 0) continue;
    total += sum / pairs;
    ++channels;
  }
  if (channels == 0) throw RangeError("mean_hist_iou: fewer than two classes present");
  return total / channels;
}

MetricBundle frozen_head_score(std::span<const FeatureTensor> features, std::span<const LabelMask> masks,
                               const SegModel& model) {
  if (features.size() != masks.size()) throw ShapeError("frozen_head_score: feature/mask count mismatch");
  const int K = model.config().num_classes;
  std::vector<ConfusionMatrix> parts(features.size(), ConfusionMatrix(K));
  parallel_for(features.size(), [&](size_t i) {
    parts[i].accumulate(argmax_labels(model.decode(features[i]).data), masks[i]);
  });
  ConfusionMatrix conf(K);
  for (const auto& p : parts) conf.merge(p);
  return compute_metrics(conf);
}

nlohmann::json StageStats::to_json() const {
  nlohmann::json j = frozen_head.to_json();
  j["stage_tag"] = stage_tag;
  j["mean_entropy"] = mean_entropy;
  j["mean_hist_iou"] = mean_hist_iou;
  return j;
}

StageStats stage_stats(const std::string& tag, std::span<const FeatureTensor> features,
                       std::span<const LabelMask> masks, const SegModel& model, int bins, double radius) {
  const FeatureHistogram h = build_histograms(features, masks, bins, radius);
  return StageStats{tag, class_channel_entropy(h).mean, mean_hist_iou(h), frozen_head_score(features, masks, model)};
}

std::vector<std::filesystem::path> render_feature_maps(const FeatureTensor& real, std::span<const FeatureTensor> fakes,
                                                       std::span<const int> channels, const LabelMask& gt,
                                                       const SegModel& model, const std::filesystem::path& out_dir,
                                                       const std::string& prefix) {
  const Tensor& r = real.data;
  for (const auto& f : fakes)
    if (!f.data.same_shape(r)) throw ShapeError("render_feature_maps: fake " + f.data.shape_str() + " vs real " +
                                                r.shape_str());
  for (int c : channels)
    if (c < 0 || c >= r.c)
      throw RangeError("render_feature_maps: channel " + std::to_string(c) + " outside [0, " + std::to_string(r.c) +
                       ")");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;

  auto gray = [&](const Tensor& t, int c, double lo, double hi, const std::filesystem::path& p) {
    RawImage img{t.w, t.h, 3, std::vector<uint8_t>(t.plane() * 3)};
    const auto ch = t.channel(c);
    for (size_t i = 0; i < ch.size(); ++i) {
      const double v = hi > lo ? (ch[i] - lo) / (hi - lo) : 0.0;
      const auto g = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = g;
    }
    write_netpbm(p, img);
    written.push_back(p);
  };

  for (int c : channels) {
    double lo = *std::min_element(r.channel(c).begin(), r.channel(c).end());
    double hi = *std::max_element(r.channel(c).begin(), r.channel(c).end());
    for (const auto& f : fakes) {
      const auto ch = f.data.channel(c);
      lo = std::min(lo, *std::min_element(ch.begin(), ch.end()));
      hi = std::max(hi, *std::max_element(ch.begin(), ch.end()));
    }
    const std::string suffix = "_c" + std::to_string(c) + ".ppm";
    gray(r, c, lo, hi, out_dir / (prefix + "_real" + suffix));
    for (size_t i = 0; i < fakes.size(); ++i)
      gray(fakes[i].data, c, lo, hi, out_dir / (prefix + "_fake" + std::to_string(i) + suffix));
  }

  const LabelMask real_pred = argmax_labels(model.decode(real).data);
  if (!real_pred.same_shape(gt)) throw ShapeError("render_feature_maps: mask does not match decoded size");
  for (size_t i = 0; i < fakes.size(); ++i) {
    const LabelMask fake_pred = argmax_labels(model.decode(fakes[i]).data);
    RawImage img{gt.width(), gt.height(), 3, std::vector<uint8_t>(gt.size() * 3, 0)};
    for (size_t p = 0; p < gt.size(); ++p) {
      const uint8_t y = gt.labels()[p];
      if (y == kIgnoreLabel) continue;
      const bool rc = real_pred.labels()[p] == y, fc = fake_pred.labels()[p] == y;
      if (fc && !rc) img.pixels[3 * p + 1] = img.pixels[3 * p + 2] = 255;
      if (rc && !fc) img.pixels[3 * p] = 255;
    }
    const auto p = out_dir / (prefix + "_diff" + std::to_string(i) + ".ppm");
    write_netpbm(p, img);
    written.push_back(p);
  }
  return written;
}

}  // namespace featgen
