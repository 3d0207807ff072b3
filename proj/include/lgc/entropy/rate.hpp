#pragma once

#include <cmath>

#include "lgc/autodiff.hpp"

namespace lgc::entropy {

// Ideal code length, in bits, of a tensor of per-symbol likelihoods.
template <typename T>
double ideal_bits(const nn::Tensor<T>& p) {
  double acc = 0.0;
  for (int64_t i = 0; i < p.numel(); i++)
    acc -= std::log2(static_cast<double>(p[i]));
  return acc;
}

// Differentiable total code length in bits: -sum(log p) / log 2.
template <typename T>
nn::Var<T> bits_node(const nn::Var<T>& p) {
  return nn::mul_scalar(nn::sum_all(nn::log_(p)),
                        static_cast<T>(-1.4426950408889634));
}

}  // namespace lgc::entropy
