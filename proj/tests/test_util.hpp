#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "lgc/autodiff.hpp"

namespace lgc::testutil {

// Central-difference gradient check: `build` reconstructs the scalar loss
// from the current leaf values, so perturbing a leaf element and rebuilding
// yields the numeric derivative. Each leaf's analytic gradient must match to
// `tol` relative error.
template <typename Build>
void fd_check(Build&& build, const std::vector<nn::Var<double>>& leaves,
              double h = 1e-5, double tol = 1e-3) {
  auto root = build();
  nn::backward(root);
  std::vector<nn::Tensor<double>> analytic;
  for (const auto& l : leaves)
    analytic.push_back(l->has_fresh_grad() ? l->grad
                                           : nn::Tensor<double>(l->value.shape));
  for (size_t li = 0; li < leaves.size(); li++) {
    const auto& l = leaves[li];
    for (int64_t i = 0; i < l->value.numel(); i++) {
      const double orig = l->value[i];
      l->value[i] = orig + h;
      const double fp = nn::value_of(build());
      l->value[i] = orig - h;
      const double fm = nn::value_of(build());
      l->value[i] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[li][i];
      const double denom = std::max({std::abs(num), std::abs(ana), 1e-6});
      CAPTURE(li);
      CAPTURE(i);
      CAPTURE(num);
      CAPTURE(ana);
      CHECK(std::abs(num - ana) / denom <= tol);
    }
  }
}

inline nn::Var<double> rand_leaf(std::vector<int> shape, Rng& rng,
                                 double lo = -1.0, double hi = 1.0) {
  nn::Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); i++) t[i] = rng.uniform(lo, hi);
  return nn::leaf(std::move(t), true);
}

// Values kept away from `kink` so finite differences of piecewise-defined
// ops (relu, abs) stay on one branch.
inline nn::Var<double> rand_leaf_away_from(std::vector<int> shape, Rng& rng,
                                           double kink = 0.0,
                                           double margin = 0.05) {
  auto v = rand_leaf(std::move(shape), rng);
  for (int64_t i = 0; i < v->value.numel(); i++) {
    double d = v->value[i] - kink;
    if (std::abs(d) < margin) v->value[i] = kink + (d >= 0 ? margin : -margin) * 2.0;
  }
  return v;
}

}  // namespace lgc::testutil
