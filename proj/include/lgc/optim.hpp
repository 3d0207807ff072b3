#pragma once

#include <vector>

#include "lgc/autodiff.hpp"

namespace lgc::nn {

// Optimizers step an explicit parameter list. A parameter whose gradient was
// not produced by the most recent backward pass is treated as having zero
// gradient (its Adam moments still decay, matching a genuine zero gradient).

template <typename T>
struct Sgd {
  T lr;
  explicit Sgd(T lr) : lr(lr) {}

  void step(const std::vector<Var<T>>& params) {
    for (const auto& p : params) {
      if (!p->has_fresh_grad()) continue;
      T* v = p->value.ptr();
      const T* g = p->grad.ptr();
      const int64_t n = p->value.numel();
      for (int64_t i = 0; i < n; i++) v[i] -= lr * g[i];
    }
  }
};

template <typename T>
struct Adam {
  T lr;
  T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
  int64_t t = 0;
  std::vector<Tensor<T>> m_, v_;

  explicit Adam(T lr) : lr(lr) {}

  void step(const std::vector<Var<T>>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p->value.shape);
        v_.emplace_back(p->value.shape);
      }
    }
    check(m_.size() == params.size(), "adam: parameter list changed between steps");
    t++;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(t)));
    const T inv_bc1 = T(1) / bc1;
    const T inv_bc2 = T(1) / bc2;
    const T one_m_b1 = T(1) - beta1;
    const T one_m_b2 = T(1) - beta2;
    for (size_t k = 0; k < params.size(); k++) {
      const auto& p = params[k];
      T* val = p->value.ptr();
      T* m = m_[k].ptr();
      T* v = v_[k].ptr();
      const int64_t n = p->value.numel();
      if (p->has_fresh_grad()) {
        const T* g = p->grad.ptr();
        for (int64_t i = 0; i < n; i++) {
          m[i] = beta1 * m[i] + one_m_b1 * g[i];
          v[i] = beta2 * v[i] + one_m_b2 * g[i] * g[i];
          val[i] -= lr * (m[i] * inv_bc1) / (std::sqrt(v[i] * inv_bc2) + eps);
        }
      } else {  // stale gradient counts as zero: moments decay, value still moves
        for (int64_t i = 0; i < n; i++) {
          m[i] = beta1 * m[i];
          v[i] = beta2 * v[i];
          val[i] -= lr * (m[i] * inv_bc1) / (std::sqrt(v[i] * inv_bc2) + eps);
        }
      }
    }
  }
};

// Temporarily clears requires_grad on a parameter set; conv/linear backward
// kernels skip the weight-gradient GEMMs for frozen parameters.
template <typename T>
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<Var<T>> params) : params_(std::move(params)) {
    for (auto& p : params_) {
      saved_.push_back(p->requires_grad);
      p->requires_grad = false;
    }
  }
  ~FreezeGuard() {
    for (size_t i = 0; i < params_.size(); i++) params_[i]->requires_grad = saved_[i];
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Var<T>> params_;
  std::vector<bool> saved_;
};

}  // namespace lgc::nn
