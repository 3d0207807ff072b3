#pragma once

#include <cmath>

#include "lgc/autodiff.hpp"

namespace lgc::entropy {

// Probability floor for likelihoods. Matches the 16-bit table precision of
// the range coder so no encodable symbol ever carries zero quantized mass.
inline constexpr double kProbFloor = 1.0 / 65536.0;

// Scale floor applied where conditional scales are produced.
inline constexpr double kSigmaMin = 1e-4;

template <typename U>
U std_normal_cdf(U t) {
  return U(0.5) * std::erfc(-t * U(0.7071067811865475244));
}

template <typename U>
U std_normal_pdf(U t) {
  return std::exp(U(-0.5) * t * t) * U(0.3989422804014326779);
}

// Mass assigned to the unit interval centred on x under N(mu, sigma^2):
// cdf(x + 1/2) - cdf(x - 1/2).
template <typename U>
U gaussian_interval_mass(U x, U mu, U sigma, bool clamp = true) {
  U a = (x + U(0.5) - mu) / sigma;
  U b = (x - U(0.5) - mu) / sigma;
  U p = std_normal_cdf(a) - std_normal_cdf(b);
  if (clamp && p < U(kProbFloor)) p = U(kProbFloor);
  return p;
}

// Elementwise interval likelihood with gradients for x, mu and sigma.
// Clamped entries propagate zero gradient.
template <typename T>
nn::Var<T> gaussian_likelihood(const nn::Var<T>& x, const nn::Var<T>& mu,
                               const nn::Var<T>& sigma, bool clamp = true) {
  using nn::Tensor;
  check(x->value.same_shape(mu->value) && x->value.same_shape(sigma->value),
        "gaussian_likelihood: shape mismatch");
  const int64_t n = x->value.numel();
  Tensor<T> out(x->value.shape);
  for (int64_t i = 0; i < n; i++) {
    double s = static_cast<double>(sigma->value[i]);
    check(s > 0.0, "gaussian_likelihood: sigma must be positive");
    out[i] = static_cast<T>(gaussian_interval_mass(
        static_cast<double>(x->value[i]), static_cast<double>(mu->value[i]), s, clamp));
  }
  return nn::make_op<T>(std::move(out), {x, mu, sigma}, [clamp](nn::Node<T>& self) {
    const auto& x = self.parents[0];
    const auto& mu = self.parents[1];
    const auto& sigma = self.parents[2];
    Tensor<T>* dx = x->requires_grad ? &nn::grad_buf(x) : nullptr;
    Tensor<T>* dmu = mu->requires_grad ? &nn::grad_buf(mu) : nullptr;
    Tensor<T>* dsig = sigma->requires_grad ? &nn::grad_buf(sigma) : nullptr;
    if (!dx && !dmu && !dsig) return;
    for (int64_t i = 0; i < self.grad.numel(); i++) {
      if (clamp && static_cast<double>(self.value[i]) <= kProbFloor) continue;
      const double s = static_cast<double>(sigma->value[i]);
      const double a = (static_cast<double>(x->value[i]) + 0.5 -
                        static_cast<double>(mu->value[i])) / s;
      const double b = (static_cast<double>(x->value[i]) - 0.5 -
                        static_cast<double>(mu->value[i])) / s;
      const double pa = std_normal_pdf(a), pb = std_normal_pdf(b);
      const double g = static_cast<double>(self.grad[i]);
      if (dx) (*dx)[i] += static_cast<T>(g * (pa - pb) / s);
      if (dmu) (*dmu)[i] -= static_cast<T>(g * (pa - pb) / s);
      if (dsig) (*dsig)[i] -= static_cast<T>(g * (a * pa - b * pb) / s);
    }
  });
}

}  // namespace lgc::entropy
