#pragma once

#include <string>
#include <vector>

#include "lgc/codec/model.hpp"
#include "lgc/entropy/rate.hpp"
#include "lgc/losses/losses.hpp"
#include "lgc/optim.hpp"
#include "lgc/train/schedule.hpp"

namespace lgc::train {

struct CodecTrainConfig {
  int iterations = 20000;
  int batch_size = 8;
  float lr_g = 2e-4f;
  float lr_d = 1e-4f;  // two-time-scale rule: discriminator at half the rate
  int log_every = 50;
  uint64_t seed = 0;
  losses::LossWeights weights;

  void validate() const {
    check_config(iterations >= 1 && batch_size >= 1 && log_every >= 1,
                 "codec training counts must be positive");
    check_config(lr_g > 0 && lr_d > 0, "learning rates must be positive");
    weights.validate();
  }
};

// One iteration's scalar diagnostics.
struct CodecTrainStep {
  int iter = 0;
  double gen_total = 0, dist = 0, rate_bpp = 0, adv_g = 0, disc = 0;
};

namespace detail {

// Assembles (B,3,H,W) from dataset images chosen by the sampler.
template <typename T>
nn::Tensor<T> gather_batch(const std::vector<nn::Tensor<T>>& images,
                           const std::vector<size_t>& idx) {
  check(!idx.empty(), "empty batch");
  const auto& first = images[idx[0]];
  nn::Tensor<T> batch({static_cast<int>(idx.size()), first.dim(0), first.dim(1), first.dim(2)});
  const int64_t stride = first.numel();
  for (size_t b = 0; b < idx.size(); b++) {
    const auto& img = images[idx[b]];
    check(img.shape == first.shape, "batch images must share a shape");
    std::copy(img.data.begin(), img.data.end(),
              batch.data.begin() + static_cast<int64_t>(b) * stride);
  }
  return batch;
}

inline void guard_finite(double v, const char* what, int iter) {
  if (!std::isfinite(v))
    throw TrainingDiverged(std::string(what) + " became non-finite at iteration " +
                           std::to_string(iter + 1));
}

}  // namespace detail

// Noisy-quantization training forward pass shared by the codec and joint
// schedules. Returns everything downstream losses need.
template <typename T>
struct CodecForward {
  nn::Var<T> x, x_hat, z1_noisy, z2_noisy;
  nn::Var<T> rate_bpp;   // differentiable estimate, bits per pixel
  nn::Var<T> dist;       // weighted distortion
  codec::DiscriminatorOutput<T> d_fake;
};

template <typename T>
CodecForward<T> codec_train_forward(const codec::LayeredCodec<T>& model, nn::Tensor<T> batch,
                                    const losses::LossWeights& w, Rng& rng,
                                    const losses::PerceptualFn<T>& perceptual = {}) {
  CodecForward<T> f;
  f.x = nn::leaf(std::move(batch));
  auto z1 = model.encode_reconstruction(f.x);
  auto z2 = model.encode_semantic(f.x);
  auto y = model.hyper_encode(z1);

  auto y_noisy = nn::quantize(y, nn::QuantizeMode::train, &rng);
  f.z1_noisy = nn::quantize(z1, nn::QuantizeMode::train, &rng);
  f.z2_noisy = nn::quantize(z2, nn::QuantizeMode::train, &rng);

  auto [mu, sigma] = model.hyper_decode(y_noisy);
  auto bits = nn::add(
      entropy::bits_node(model.hyper_prior().likelihood(y_noisy)),
      nn::add(entropy::bits_node(entropy::gaussian_likelihood(f.z1_noisy, mu, sigma)),
              entropy::bits_node(model.semantic_prior().likelihood(f.z2_noisy))));
  const auto& shape = f.x->value;
  f.rate_bpp = nn::mul_scalar(
      bits, static_cast<T>(1.0 / (static_cast<double>(shape.dim(0)) * shape.dim(2) * shape.dim(3))));

  f.x_hat = model.decode(f.z1_noisy, f.z2_noisy);
  f.dist = losses::distortion(f.x, f.x_hat, w, perceptual);
  f.d_fake = model.discriminate(f.x_hat, f.z1_noisy);
  return f;
}

// Alternating generator/discriminator optimization of the codec.
// Adaptive-moment optimizer (0.9/0.999) on both sides; generator at lr_g over
// every non-discriminator group, discriminator at lr_d.
template <typename T>
std::vector<CodecTrainStep> train_codec(codec::LayeredCodec<T>& model,
                                        const std::vector<nn::Tensor<T>>& images,
                                        const CodecTrainConfig& cfg, TrainLog* log = nullptr,
                                        const losses::PerceptualFn<T>& perceptual = {}) {
  cfg.validate();
  check(!images.empty(), "codec training needs a non-empty dataset");

  Rng root(cfg.seed);
  Rng sample_rng = root.child(1);
  Rng noise_rng = root.child(2);

  auto gen_params = model.generator_params();
  auto disc_params = model.discriminator_params();
  nn::Adam<T> opt_g(static_cast<T>(cfg.lr_g));
  nn::Adam<T> opt_d(static_cast<T>(cfg.lr_d));

  std::vector<CodecTrainStep> steps;
  steps.reserve(static_cast<size_t>(cfg.iterations));

  for (int iter = 0; iter < cfg.iterations; iter++) {
    std::vector<size_t> idx(static_cast<size_t>(cfg.batch_size));
    for (auto& i : idx) i = static_cast<size_t>(sample_rng.below(images.size()));
    auto batch = detail::gather_batch(images, idx);

    CodecTrainStep rec;
    rec.iter = iter + 1;

    CodecForward<T> f;
    {  // generator step; discriminator weights frozen, scores still flow
      nn::FreezeGuard<T> freeze(disc_params);
      f = codec_train_forward(model, std::move(batch), cfg.weights, noise_rng, perceptual);
      auto total = losses::generator_loss(f.rate_bpp, f.dist, f.d_fake, cfg.weights);
      rec.gen_total = static_cast<double>(nn::value_of(total));
      rec.dist = static_cast<double>(nn::value_of(f.dist));
      rec.rate_bpp = static_cast<double>(nn::value_of(f.rate_bpp));
      rec.adv_g = static_cast<double>(
          nn::value_of(losses::generator_adversarial(f.d_fake, cfg.weights.gan_mode)));
      detail::guard_finite(rec.gen_total, "generator loss", iter);
      nn::backward(total);
      opt_g.step(gen_params);
    }
    {  // discriminator step: reuse the fake scores from the shared forward
      // pass (the generator update does not touch discriminator weights, so
      // the values match a fresh forward); barriers at the generator outputs
      // stop its gradients from flowing back into the generator.
      auto d_real = model.discriminate(f.x, f.z1_noisy);
      auto d_loss = losses::discriminator_loss(d_real, f.d_fake, cfg.weights.gan_mode);
      rec.disc = static_cast<double>(nn::value_of(d_loss));
      detail::guard_finite(rec.disc, "discriminator loss", iter);
      nn::backward(d_loss, {f.x_hat, f.z1_noisy});
      opt_d.step(disc_params);
    }

    steps.push_back(rec);
    if (log && (rec.iter % cfg.log_every == 0 || rec.iter == cfg.iterations)) {
      log->record({{"schedule", "codec"},
                   {"iter", rec.iter},
                   {"gen_total", rec.gen_total},
                   {"dist", rec.dist},
                   {"rate_bpp", rec.rate_bpp},
                   {"adv_g", rec.adv_g},
                   {"disc", rec.disc},
                   {"lr_g", cfg.lr_g},
                   {"lr_d", cfg.lr_d}});
    }
  }
  return steps;
}

}  // namespace lgc::train
