#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lgc/codec/model.hpp"
#include "lgc/conv.hpp"

namespace lgc::losses {

enum class GanMode { lsgan, vanilla };

inline GanMode gan_mode_from_string(const std::string& s) {
  if (s == "lsgan") return GanMode::lsgan;
  if (s == "vanilla") return GanMode::vanilla;
  throw ConfigError("unknown gan mode: " + s + " (expected lsgan|vanilla)");
}

// Objective weights. Every term is weighted non-negatively; the adversarial
// terms default to least-squares form with a plain-logistic switch.
struct LossWeights {
  double lambda_mae = 10.0;
  double lambda_ssim = 0.25;
  double lambda_p = 0.2;
  double lambda_rate = 1.0;   // per rate point, in bits per pixel
  double beta_adv = 0.15;
  double lambda_cls = 1.0;
  double lambda_seg = 2.0;
  double gamma_joint = 1.0;
  GanMode gan_mode = GanMode::lsgan;

  void validate() const {
    for (double v : {lambda_mae, lambda_ssim, lambda_p, lambda_rate, beta_adv,
                     lambda_cls, lambda_seg, gamma_joint})
      check_config(v >= 0.0, "loss weights must be non-negative");
  }
};

// Scalar loss terms recorded at each step for logging and divergence checks.
struct LossBundle {
  double mae = 0, ssim = 0, perceptual = 0, rate_bits = 0;
  double adv_g = 0, adv_d = 0, cls = 0, seg = 0, total = 0;

  bool all_finite() const {
    for (double v : {mae, ssim, perceptual, rate_bits, adv_g, adv_d, cls, seg, total})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

template <typename T>
using PerceptualFn = std::function<nn::Var<T>(const nn::Var<T>&, const nn::Var<T>&)>;

template <typename T>
nn::Var<T> mae_loss(const nn::Var<T>& x, const nn::Var<T>& y) {
  check(x->value.same_shape(y->value), "mae: shape mismatch");
  return nn::mean_all(nn::abs_(nn::sub(x, y)));
}

// 11-tap Gaussian window (sigma 1.5), normalized to unit sum.
template <typename T>
std::vector<T> ssim_window_taps() {
  std::vector<T> taps(11);
  double sum = 0.0;
  for (int i = 0; i < 11; i++) {
    double d = i - 5;
    double v = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    taps[static_cast<size_t>(i)] = static_cast<T>(v);
    sum += v;
  }
  for (auto& t : taps) t = static_cast<T>(t / sum);
  return taps;
}

// Mean structural similarity over valid 11x11 Gaussian windows of every
// channel, with the standard stabilizers for a unit dynamic range.
template <typename T>
nn::Var<T> ssim(const nn::Var<T>& x, const nn::Var<T>& y) {
  check(x->value.same_shape(y->value), "ssim: shape mismatch");
  check(x->value.ndim() == 4 && x->value.dim(2) >= 11 && x->value.dim(3) >= 11,
        "ssim: inputs must be NCHW with spatial extent >= 11");
  const T c1 = T(1e-4), c2 = T(9e-4);
  auto taps = ssim_window_taps<T>();

  auto mu_x = nn::blur_valid(x, taps);
  auto mu_y = nn::blur_valid(y, taps);
  auto mu_xx = nn::mul(mu_x, mu_x);
  auto mu_yy = nn::mul(mu_y, mu_y);
  auto mu_xy = nn::mul(mu_x, mu_y);
  auto sigma_xx = nn::sub(nn::blur_valid(nn::mul(x, x), taps), mu_xx);
  auto sigma_yy = nn::sub(nn::blur_valid(nn::mul(y, y), taps), mu_yy);
  auto sigma_xy = nn::sub(nn::blur_valid(nn::mul(x, y), taps), mu_xy);

  auto num = nn::mul(nn::add_scalar(nn::mul_scalar(mu_xy, T(2)), c1),
                     nn::add_scalar(nn::mul_scalar(sigma_xy, T(2)), c2));
  auto den = nn::mul(nn::add_scalar(nn::add(mu_xx, mu_yy), c1),
                     nn::add_scalar(nn::add(sigma_xx, sigma_yy), c2));
  return nn::mean_all(nn::div(num, den));
}

// Mean absolute difference between band-pass pyramids (each level keeps the
// detail lost by a 2x box downsample; the final low-pass joins as-is).
template <typename T>
nn::Var<T> laplacian_pyramid_distance(const nn::Var<T>& x, const nn::Var<T>& y,
                                      int levels = 3) {
  check(x->value.same_shape(y->value), "pyramid distance: shape mismatch");
  check(levels >= 1, "pyramid distance: need at least one level");
  auto band_gap = [](const nn::Var<T>& a, const nn::Var<T>& b) {
    auto da = nn::sub(a, nn::nearest_up(nn::avgpool2(a), 2));
    auto db = nn::sub(b, nn::nearest_up(nn::avgpool2(b), 2));
    return nn::mean_all(nn::abs_(nn::sub(da, db)));
  };
  nn::Var<T> cx = x, cy = y, acc;
  for (int l = 0; l < levels; l++) {
    check(cx->value.dim(2) % 2 == 0 && cx->value.dim(3) % 2 == 0,
          "pyramid distance: spatial dims must halve " + std::to_string(levels) + " times");
    auto term = band_gap(cx, cy);
    acc = acc ? nn::add(acc, term) : term;
    cx = nn::avgpool2(cx);
    cy = nn::avgpool2(cy);
  }
  return nn::add(acc, nn::mean_all(nn::abs_(nn::sub(cx, cy))));
}

// Weighted pixel error + structural term + optional perceptual distance.
// When no plug-in is supplied the pyramid distance above is used.
template <typename T>
nn::Var<T> distortion(const nn::Var<T>& x, const nn::Var<T>& x_hat, const LossWeights& w,
                      const PerceptualFn<T>& perceptual = {}) {
  check(x->value.same_shape(x_hat->value), "distortion: shape mismatch");
  auto out = nn::mul_scalar(mae_loss(x, x_hat), static_cast<T>(w.lambda_mae));
  if (w.lambda_ssim > 0) {
    auto one_minus = nn::add_scalar(nn::mul_scalar(ssim(x, x_hat), T(-1)), T(1));
    out = nn::add(out, nn::mul_scalar(one_minus, static_cast<T>(w.lambda_ssim)));
  }
  if (w.lambda_p > 0) {
    auto d_p = perceptual ? perceptual(x, x_hat) : laplacian_pyramid_distance(x, x_hat);
    out = nn::add(out, nn::mul_scalar(d_p, static_cast<T>(w.lambda_p)));
  }
  return out;
}

namespace detail {
template <typename T>
nn::Var<T> square_gap_mean(const nn::Var<T>& score, T target) {
  return nn::mean_all(nn::square(nn::add_scalar(score, -target)));
}
template <typename T>
nn::Var<T> logistic_mean(const nn::Var<T>& score, T target) {
  nn::Tensor<T> t(score->value.shape, target);
  return nn::bce_with_logits(score, t);
}
}  // namespace detail

// Generator-side adversarial term, averaged over the two scales.
template <typename T>
nn::Var<T> generator_adversarial(const codec::DiscriminatorOutput<T>& fake, GanMode mode) {
  nn::Var<T> a, b;
  if (mode == GanMode::lsgan) {
    a = detail::square_gap_mean(fake.scale1, T(1));
    b = detail::square_gap_mean(fake.scale2, T(1));
  } else {  // non-saturating logistic form
    a = detail::logistic_mean(fake.scale1, T(1));
    b = detail::logistic_mean(fake.scale2, T(1));
  }
  return nn::mul_scalar(nn::add(a, b), T(0.5));
}

// Full codec objective: rate + distortion + weighted adversarial term.
template <typename T>
nn::Var<T> generator_loss(const nn::Var<T>& rate_bpp, const nn::Var<T>& dist,
                          const codec::DiscriminatorOutput<T>& disc_fake,
                          const LossWeights& w) {
  auto out = nn::add(nn::mul_scalar(rate_bpp, static_cast<T>(w.lambda_rate)), dist);
  return nn::add(out, nn::mul_scalar(generator_adversarial(disc_fake, w.gan_mode),
                                     static_cast<T>(w.beta_adv)));
}

// Discriminator objective: mean over scales of the real/fake pair terms.
template <typename T>
nn::Var<T> discriminator_loss(const codec::DiscriminatorOutput<T>& real,
                              const codec::DiscriminatorOutput<T>& fake,
                              GanMode mode = GanMode::lsgan) {
  nn::Var<T> s1, s2;
  if (mode == GanMode::lsgan) {
    s1 = nn::add(detail::square_gap_mean(real.scale1, T(1)),
                 detail::square_gap_mean(fake.scale1, T(0)));
    s2 = nn::add(detail::square_gap_mean(real.scale2, T(1)),
                 detail::square_gap_mean(fake.scale2, T(0)));
  } else {
    s1 = nn::add(detail::logistic_mean(real.scale1, T(1)),
                 detail::logistic_mean(fake.scale1, T(0)));
    s2 = nn::add(detail::logistic_mean(real.scale2, T(1)),
                 detail::logistic_mean(fake.scale2, T(0)));
  }
  return nn::mul_scalar(nn::add(s1, s2), T(0.5));
}

// Weighted attribute + segmentation objective. Either head may be absent
// (single-task variants); its term then contributes nothing.
template <typename T>
nn::Var<T> multitask_loss(const nn::Var<T>& attr_logits, const nn::Tensor<T>& attr_labels,
                          const nn::Var<T>& seg_logits, const nn::TensorI& seg_labels,
                          const LossWeights& w) {
  check(attr_logits || seg_logits, "multitask loss needs at least one head");
  nn::Var<T> out;
  if (attr_logits) {
    out = nn::mul_scalar(nn::bce_with_logits(attr_logits, attr_labels),
                         static_cast<T>(w.lambda_cls));
  }
  if (seg_logits) {
    auto seg = nn::mul_scalar(nn::softmax_cross_entropy(seg_logits, seg_labels),
                              static_cast<T>(w.lambda_seg));
    out = out ? nn::add(out, seg) : seg;
  }
  return out;
}

// Combined fine-tuning objective: codec term + discriminator term + weighted
// analysis term.
template <typename T>
nn::Var<T> joint_loss(const nn::Var<T>& gen, const nn::Var<T>& disc, const nn::Var<T>& mt,
                      const LossWeights& w) {
  return nn::add(nn::add(gen, disc), nn::mul_scalar(mt, static_cast<T>(w.gamma_joint)));
}

}  // namespace lgc::losses
