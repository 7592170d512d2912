#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "adjust/tensor.hpp"

namespace adjust {

// Adam with bias correction; beta = (0.9, 0.999), eps = 1e-8.
class AdamState {
 public:
  explicit AdamState(const std::vector<std::pair<std::string, Tensor>>& params,
                     double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }

  void step(std::vector<std::pair<std::string, Tensor>>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Tensor& p = params[pi].second;
      auto* node = p.node().get();
      if (node->grad.empty()) node->grad.assign(node->value.size(), 0.0);
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (int64_t i = 0; i < p.size(); ++i) {
        const double g = node->grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        node->value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace adjust
