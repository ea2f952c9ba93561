#include "featgen/metrics.h"

#include "featgen/errors.h"

namespace featgen {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : k_(num_classes), counts_(static_cast<size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 2) throw RangeError("ConfusionMatrix needs at least 2 classes");
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts_) t += c;
  return t;
}

int64_t ConfusionMatrix::row_sum(int k) const {
  int64_t t = 0;
  for (int j = 0; j < k_; ++j) t += at(k, j);
  return t;
}

int64_t ConfusionMatrix::col_sum(int k) const {
  int64_t t = 0;
  for (int i = 0; i < k_; ++i) t += at(i, k);
  return t;
}

void ConfusionMatrix::accumulate(const LabelMask& pred, const LabelMask& gt) {
  if (!pred.same_shape(gt))
    throw ShapeError("confusion: prediction " + std::to_string(pred.height()) + "x" + std::to_string(pred.width()) +
                     " vs ground truth " + std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
  const auto& p = pred.labels();
  const auto& g = gt.labels();
  // Validate first so a bad mask leaves the matrix untouched.
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] >= k_) throw RangeError("confusion: predicted class " + std::to_string(p[i]) + " out of range");
    if (g[i] != kIgnoreLabel && g[i] >= k_)
      throw RangeError("confusion: ground-truth class " + std::to_string(g[i]) + " out of range");
  }
  for (size_t i = 0; i < p.size(); ++i)
    if (g[i] != kIgnoreLabel) ++at(g[i], p[i]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("confusion: merging matrices of different class counts");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

ConfusionMatrix accumulate(ConfusionMatrix conf, const LabelMask& pred, const LabelMask& gt) {
  conf.accumulate(pred, gt);
  return conf;
}

MetricBundle compute_metrics(const ConfusionMatrix& conf) {
  const int64_t total = conf.total();
  if (total <= 0) throw RangeError("compute_metrics: empty confusion matrix");
  const int k = conf.num_classes();
  MetricBundle m;
  m.per_class_acc.assign(k, std::nullopt);
  m.per_class_iou.assign(k, std::nullopt);

  int64_t trace = 0;
  int present = 0;
  double acc_sum = 0.0, iou_sum = 0.0, fw = 0.0;
  for (int c = 0; c < k; ++c) {
    const int64_t tp = conf.at(c, c);
    const int64_t rows = conf.row_sum(c);
    const int64_t cols = conf.col_sum(c);
    trace += tp;
    if (rows == 0) continue;
    const double acc = static_cast<double>(tp) / static_cast<double>(rows);
    const double iou = static_cast<double>(tp) / static_cast<double>(rows + cols - tp);
    m.per_class_acc[c] = acc;
    m.per_class_iou[c] = iou;
    acc_sum += acc;
    iou_sum += iou;
    fw += static_cast<double>(rows) / static_cast<double>(total) * iou;
    ++present;
  }
  m.pixel_acc = static_cast<double>(trace) / static_cast<double>(total);
  m.class_acc = acc_sum / present;
  m.miou = iou_sum / present;
  m.fwiou = fw;
  return m;
}

nlohmann::json MetricBundle::to_json() const {
  auto vec = [](const std::vector<std::optional<double>>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : v) a.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
    return a;
  };
  return {{"pixel_acc", pixel_acc},
          {"class_acc", class_acc},
          {"miou", miou},
          {"fwiou", fwiou},
          {"per_class_acc", vec(per_class_acc)},
          {"per_class_iou", vec(per_class_iou)}};
}

MetricBundle MetricBundle::from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    std::vector<std::optional<double>> v;
    for (const auto& x : a) v.push_back(x.is_null() ? std::nullopt : std::optional<double>(x.get<double>()));
    return v;
  };
  MetricBundle m;
  m.pixel_acc = j.at("pixel_acc").get<double>();
  m.class_acc = j.at("class_acc").get<double>();
  m.miou = j.at("miou").get<double>();
  m.fwiou = j.at("fwiou").get<double>();
  m.per_class_acc = vec(j.at("per_class_acc"));
  m.per_class_iou = vec(j.at("per_class_iou"));
  return m;
}

}  // namespace featgen
