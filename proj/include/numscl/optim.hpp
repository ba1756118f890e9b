#pragma once

#include <cmath>
#include <vector>

#include "numscl/autodiff.hpp"

namespace numscl {

/// Adam over every parameter of a store. Gradients are consumed and zeroed by step().
class Adam {
 public:
  explicit Adam(ParamStore& store, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : store_(&store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      m_.push_back(Tensor::zeros_like(store[i].value));
      v_.push_back(Tensor::zeros_like(store[i].value));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < store_->size(); ++pi) {
      Param& p = (*store_)[pi];
      Tensor& m = m_[pi];
      Tensor& v = v_[pi];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
      p.grad.fill(0.0);
    }
  }

  double learning_rate() const { return lr_; }
  long steps() const { return t_; }

 private:
  ParamStore* store_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace numscl
