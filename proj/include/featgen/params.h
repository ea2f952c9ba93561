#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace featgen {

struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
};

// Ordered parameter storage for one network. Registration order is the
// serialization order of checkpoints.
class ParamSet {
 public:
  int add(std::string name, std::vector<int> shape);

  size_t size() const { return params_.size(); }
  Param& operator[](size_t i) { return params_[i]; }
  const Param& operator[](size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  size_t scalar_count() const;
  // FNV-1a over the raw bytes of params [first, last).
  uint64_t checksum(size_t first = 0, size_t last = SIZE_MAX) const;
  // Rounds every value to the nearest binary32; checkpoints store f32.
  void round_to_float();

 private:
  std::vector<Param> params_;
};

// Gradient buffers shaped like a ParamSet.
class GradSet {
 public:
  GradSet() = default;
  explicit GradSet(const ParamSet& ps);

  std::vector<double>& operator[](size_t i) { return grads_[i]; }
  const std::vector<double>& operator[](size_t i) const { return grads_[i]; }
  size_t size() const { return grads_.size(); }

  void zero();
  void add(const GradSet& other);
  void scale(double s);
  bool all_finite() const;

 private:
  std::vector<std::vector<double>> grads_;
};

// He-style initialization: N(0, 2 / fan_in) for weights of rank >= 2, zeros for biases.
void init_fan_in_normal(ParamSet& ps, std::mt19937_64& rng);

class SgdMomentum {
 public:
  SgdMomentum(const ParamSet& ps, double momentum, double weight_decay);
  // v = m v + lr (g + wd w); w -= v, for params [first, last) only.
  void step(ParamSet& ps, const GradSet& g, double lr, size_t first = 0, size_t last = SIZE_MAX);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

class Adam {
 public:
  Adam(const ParamSet& ps, double lr, double beta1, double beta2, double eps = 1e-8);
  void step(ParamSet& ps, const GradSet& g);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace featgen
