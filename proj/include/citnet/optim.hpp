#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "citnet/params.hpp"

namespace citnet {

// Bias-corrected Adam. State (first/second moments, shared step counter)
// persists across steps; parameters are updated in place between graph
// builds.
template <typename T>
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  int64_t step_count() const { return t_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  // One update over every trainable parameter that received a gradient.
  void step(ModelParams<T>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& e : params.entries()) {
      if (!e.trainable || !e.tensor.has_grad()) continue;
      auto& m = moment1_[e.name];
      auto& v = moment2_[e.name];
      const size_t n = static_cast<size_t>(e.tensor.numel());
      if (m.size() != n) {
        m.assign(n, T(0));
        v.assign(n, T(0));
      }
      const auto grad = e.tensor.grad();
      const T* g = grad.data().data();
      T* p = e.tensor.mutable_data().data();
      const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
      const T one = T(1);
      for (size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        const double mhat = static_cast<double>(m[i]) / bc1;
        const double vhat = static_cast<double>(v[i]) / bc2;
        p[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::unordered_map<std::string, std::vector<T>> moment1_;
  std::unordered_map<std::string, std::vector<T>> moment2_;
};

}  // namespace citnet
