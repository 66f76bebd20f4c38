// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "genreg/networks.hpp"

namespace genreg {

/// Adaptive-moment gradient descent over a ParamSet, states laid out in the
/// set's item order.
template <typename S>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(S lr = S(1e-4), S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet<S>& params, const std::vector<std::vector<S>>& grads) {
    if (grads.size() != params.items.size())
      throw SizeMismatch("AdamOptimizer: gradient slab count does not match the parameter set");
    if (m_.empty()) {
      m_.resize(params.items.size());
      v_.resize(params.items.size());
      for (std::size_t i = 0; i < params.items.size(); ++i) {
        m_[i].assign(params.items[i].second.values().size(), S(0));
        v_[i].assign(params.items[i].second.values().size(), S(0));
      }
    }
    ++t_;
    const S bc1 = S(1) - std::pow(beta1_, S(t_));
    const S bc2 = S(1) - std::pow(beta2_, S(t_));
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      auto& values = params.items[i].second.mutable_values();
      const auto& g = grads[i];
      if (g.size() != values.size())
        throw SizeMismatch("AdamOptimizer: gradient size mismatch on '" + params.items[i].first + "'");
      for (std::size_t j = 0; j < values.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (S(1) - beta1_) * g[j];
        v_[i][j] = beta2_ * v_[i][j] + (S(1) - beta2_) * g[j] * g[j];
        const S m_hat = m_[i][j] / bc1;
        const S v_hat = v_[i][j] / bc2;
        values[j] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
      }
    }
  }

  long steps_taken() const { return t_; }

 private:
  S lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

}  // namespace genreg
