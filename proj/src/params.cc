#include "featgen/params.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

namespace featgen {

int ParamSet::add(std::string name, std::vector<int> shape) {
  const size_t n = std::accumulate(shape.begin(), shape.end(), size_t{1}, std::multiplies<>());
  params_.push_back(Param{std::move(name), std::move(shape), std::vector<double>(n, 0.0)});
  return static_cast<int>(params_.size() - 1);
}

size_t ParamSet::scalar_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

uint64_t ParamSet::checksum(size_t first, size_t last) const {
  uint64_t h = 1469598103934665603ull;
  last = std::min(last, params_.size());
  for (size_t i = first; i < last; ++i) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(params_[i].value.data());
    const size_t n = params_[i].value.size() * sizeof(double);
    for (size_t b = 0; b < n; ++b) {
      h ^= bytes[b];
      h *= 1099511628211ull;
    }
  }
  return h;
}

void ParamSet::round_to_float() {
  for (auto& p : params_)
    for (double& v : p.value) v = static_cast<double>(static_cast<float>(v));
}

GradSet::GradSet(const ParamSet& ps) {
  grads_.reserve(ps.size());
  for (const auto& p : ps) grads_.emplace_back(p.value.size(), 0.0);
}

void GradSet::zero() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

void GradSet::add(const GradSet& other) {
  for (size_t i = 0; i < grads_.size(); ++i)
    for (size_t j = 0; j < grads_[i].size(); ++j) grads_[i][j] += other.grads_[i][j];
}

void GradSet::scale(double s) {
  for (auto& g : grads_)
    for (double& v : g) v *= s;
}

bool GradSet::all_finite() const {
  for (const auto& g : grads_)
    for (double v : g)
      if (!std::isfinite(v)) return false;
  return true;
}

void init_fan_in_normal(ParamSet& ps, std::mt19937_64& rng) {
  for (auto& p : ps) {
    if (p.shape.size() < 2) {
      std::fill(p.value.begin(), p.value.end(), 0.0);
      continue;
    }
    // shape = [out, in, kh, kw] or [out, in]
    const size_t fan_in = p.value.size() / static_cast<size_t>(p.shape[0]);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& v : p.value) v = dist(rng);
  }
}

SgdMomentum::SgdMomentum(const ParamSet& ps, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : ps) velocity_.emplace_back(p.value.size(), 0.0);
}

void SgdMomentum::step(ParamSet& ps, const GradSet& g, double lr, size_t first, size_t last) {
  last = std::min(last, ps.size());
  for (size_t i = first; i < last; ++i) {
    auto& w = ps[i].value;
    auto& v = velocity_[i];
    const auto& gi = g[i];
    for (size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum_ * v[j] + lr * (gi[j] + weight_decay_ * w[j]);
      w[j] -= v[j];
    }
  }
}

Adam::Adam(const ParamSet& ps, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : ps) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

void Adam::step(ParamSet& ps, const GradSet& g) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < ps.size(); ++i) {
    auto& w = ps[i].value;
    for (size_t j = 0; j < w.size(); ++j) {
      const double gj = g[i][j];
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
      w[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
    }
  }
}

}  // namespace featgen
