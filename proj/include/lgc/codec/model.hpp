#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <utility>

#include "lgc/codec/config.hpp"
#include "lgc/entropy/factorized.hpp"
#include "lgc/layers.hpp"

namespace lgc::codec {

// Per-channel modulation predicted from the semantic vector.
template <typename T>
struct FusionParams {
  nn::Var<T> gamma;  // (N, C)
  nn::Var<T> beta;   // (N, C)
};

template <typename T>
struct DiscriminatorOutput {
  nn::Var<T> scale1;  // score grid at full resolution
  nn::Var<T> scale2;  // score grid on the x2-downsampled copy
};

// Two-branch generative codec: a grid latent z1 carrying layout, a global
// semantic vector z2 injected into the decoder through AdaIN, a hyperprior
// over z1, and two conditional discriminators used only during training.
//
// Parameter groups (the first path segment of each name) route optimizer
// updates and checkpoint hashing: encoder_r, encoder_s, hyper_enc, hyper_dec,
// prior_hyper, prior_z2, fusion, decoder, disc1, disc2.
template <typename T>
class LayeredCodec {
 public:
  static constexpr int kResBlocks = 4;
  static constexpr T kLReluSlope = T(0.2);

  LayeredCodec(const CodecConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const int bw = cfg_.base_width;
    const int c1 = cfg_.c1, c2 = cfg_.c2;
    Rng root(seed);

    {  // reconstruction branch: four stride-2 blocks, factor 16
      Rng r = root.child(1);
      const int w[5] = {3, bw, 2 * bw, 4 * bw, c1};
      for (int i = 0; i < 4; i++)
        enc_r_[i] = nn::Conv2dLayer<T>(ps_, "encoder_r.conv" + std::to_string(i),
                                       w[i], w[i + 1], 4, 2, 1, r, 0.2);
    }
    {  // semantic branch: same trunk, ends in c2 channels + global pooling
      Rng r = root.child(2);
      const int w[5] = {3, bw, 2 * bw, 4 * bw, c2};
      for (int i = 0; i < 4; i++)
        enc_s_[i] = nn::Conv2dLayer<T>(ps_, "encoder_s.conv" + std::to_string(i),
                                       w[i], w[i + 1], 4, 2, 1, r, 0.2);
    }
    const int hw = std::max(32, c1);  // hyper trunk width
    {                                 // hyperprior analysis: factor 4 down
      Rng r = root.child(3);
      hyper_enc_[0] = nn::Conv2dLayer<T>(ps_, "hyper_enc.conv0", c1, hw, 3, 2, 1, r, 0.2);
      hyper_enc_[1] = nn::Conv2dLayer<T>(ps_, "hyper_enc.conv1", hw, c1, 3, 2, 1, r, 0.0);
    }
    {  // hyperprior synthesis: mirrored, emits mean and raw scale
      Rng r = root.child(4);
      hyper_dec_[0] = nn::Conv2dLayer<T>(ps_, "hyper_dec.conv0", c1, hw, 3, 1, 1, r, 0.2);
      hyper_dec_[1] = nn::Conv2dLayer<T>(ps_, "hyper_dec.conv1", hw, 2 * c1, 3, 1, 1, r, 0.0);
    }
    {  // factorized priors over the hyperlatent and the semantic vector
      Rng r = root.child(5);
      prior_hyper_ = entropy::FactorizedModel<T>(ps_, "prior_hyper", c1, r);
      prior_z2_ = entropy::FactorizedModel<T>(ps_, "prior_z2", c2, r);
    }
    const int dw = cfg_.decoder_width();
    {  // fusion MLP: z2 -> per-block AdaIN modulation, identity at init
      Rng r = root.child(6);
      const int out = kResBlocks * 2 * 2 * dw;
      fusion_[0] = nn::LinearLayer<T>(ps_, "fusion.l0", c2, 128, r);
      fusion_[1] = nn::LinearLayer<T>(ps_, "fusion.l1", 128, 128, r);
      fusion_[2] = nn::LinearLayer<T>(ps_, "fusion.l2", 128, out, r, 0.0, /*zero_init=*/true);
    }
    {  // generative decoder
      Rng r = root.child(7);
      dec_stem_ = nn::Conv2dLayer<T>(ps_, "decoder.stem", c1, dw, 3, 1, 1, r, 0.0);
      for (int b = 0; b < kResBlocks; b++) {
        dec_res_[b][0] = nn::Conv2dLayer<T>(
            ps_, "decoder.res" + std::to_string(b) + "a", dw, dw, 3, 1, 1, r, 0.0);
        dec_res_[b][1] = nn::Conv2dLayer<T>(
            ps_, "decoder.res" + std::to_string(b) + "b", dw, dw, 3, 1, 1, r, 0.0);
      }
      const int uw[5] = {dw, 2 * bw, bw, bw / 2, bw / 2};
      for (int i = 0; i < 4; i++)
        dec_up_[i] = nn::Conv2dLayer<T>(ps_, "decoder.up" + std::to_string(i),
                                        uw[i], uw[i + 1], 3, 1, 1, r, 0.2);
      dec_out_ = nn::Conv2dLayer<T>(ps_, "decoder.out", bw / 2, 3, 3, 1, 1, r, 0.0);
    }
    {  // two-scale conditional discriminators (fixed table widths)
      Rng r1 = root.child(8), r2 = root.child(9);
      const int in = 3 + c1;
      const int w1[6] = {in, 64, 128, 256, 512, 1};
      const int w2[6] = {in, 32, 64, 128, 256, 1};
      const int strides[5] = {2, 2, 2, 1, 1};
      for (int i = 0; i < 5; i++) {
        disc1_[i] = nn::Conv2dLayer<T>(ps_, "disc1.conv" + std::to_string(i),
                                       w1[i], w1[i + 1], 4, strides[i], 1, r1, 0.2);
        disc2_[i] = nn::Conv2dLayer<T>(ps_, "disc2.conv" + std::to_string(i),
                                       w2[i], w2[i + 1], 4, strides[i], 1, r2, 0.2);
      }
    }
  }

  const CodecConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return ps_; }
  const nn::ParamStore<T>& params() const { return ps_; }
  const entropy::FactorizedModel<T>& hyper_prior() const { return prior_hyper_; }
  const entropy::FactorizedModel<T>& semantic_prior() const { return prior_z2_; }

  // Times the image decoder ran; analysis paths must never advance this.
  int64_t decode_calls() const { return decode_calls_; }

  // Digest of the architecture plus all parameter bytes; bitstreams carry it
  // so decoding with the wrong model fails fast.
  uint64_t digest() const {
    Fnv1a64 h;
    cfg_.feed_digest(h);
    for (const auto& [name, v] : ps_.items()) {
      h.update(name.data(), name.size());
      h.update(v->value.ptr(), sizeof(T) * static_cast<size_t>(v->value.numel()));
    }
    return h.digest();
  }

  nn::Var<T> encode_reconstruction(const nn::Var<T>& x) const {
    check_image(x);
    nn::Var<T> h = x;
    for (int i = 0; i < 4; i++)
      h = enc_r_[i](h, i < 3 ? nn::Act::leaky : nn::Act::none, kLReluSlope);
    return h;
  }

  nn::Var<T> encode_semantic(const nn::Var<T>& x) const {
    check_image(x);
    nn::Var<T> h = x;
    for (int i = 0; i < 4; i++)
      h = enc_s_[i](h, i < 3 ? nn::Act::leaky : nn::Act::none, kLReluSlope);
    return nn::global_avg_pool(h);  // (N, c2)
  }

  nn::Var<T> hyper_encode(const nn::Var<T>& z1) const {
    check_latent(z1);
    auto h = hyper_enc_[0](z1, nn::Act::leaky, kLReluSlope);
    return hyper_enc_[1](h);
  }

  // Quantized hyperlatent -> per-element gaussian parameters for z1.
  std::pair<nn::Var<T>, nn::Var<T>> hyper_decode(const nn::Var<T>& y_hat) const {
    check(y_hat->value.ndim() == 4 && y_hat->value.dim(1) == cfg_.c1 &&
              y_hat->value.dim(2) == cfg_.hyper_height() &&
              y_hat->value.dim(3) == cfg_.hyper_width(),
          "hyper_decode: hyperlatent shape mismatch");
    auto h = hyper_dec_[0](nn::nearest_up(y_hat, 2), nn::Act::leaky, kLReluSlope);
    auto out = hyper_dec_[1](nn::nearest_up(h, 2));
    auto mu = nn::slice_channels(out, 0, cfg_.c1);
    auto sigma = nn::add_scalar(nn::softplus(nn::slice_channels(out, cfg_.c1, 2 * cfg_.c1)),
                                static_cast<T>(cfg_.sigma_min));
    return {mu, sigma};
  }

  // Per-(block, stage) AdaIN parameters predicted from z2. gamma is
  // 1 + raw so a freshly initialized fusion is an identity modulation.
  std::array<std::array<FusionParams<T>, 2>, kResBlocks> fusion_params(
      const nn::Var<T>& z2) const {
    check(z2->value.ndim() == 2 && z2->value.dim(1) == cfg_.c2,
          "fusion: semantic vector must be (N, c2)");
    auto h = nn::relu(fusion_[0](z2));
    h = nn::relu(fusion_[1](h));
    auto raw = fusion_[2](h);
    const int dw = cfg_.decoder_width();
    std::array<std::array<FusionParams<T>, 2>, kResBlocks> out;
    for (int b = 0; b < kResBlocks; b++)
      for (int s = 0; s < 2; s++) {
        const int off = ((b * 2 + s) * 2) * dw;
        out[b][s].gamma =
            nn::add_scalar(nn::slice_channels(raw, off, off + dw), T(1));
        out[b][s].beta = nn::slice_channels(raw, off + dw, off + 2 * dw);
      }
    return out;
  }

  // One AdaIN application driven by z2 (the first fused stage by default);
  // exposed so the modulation statistics contract is directly testable.
  nn::Var<T> adain_fuse(const nn::Var<T>& features, const nn::Var<T>& z2,
                        int block = 0, int stage = 0) const {
    check(features->value.ndim() == 4 && features->value.dim(1) == cfg_.decoder_width(),
          "adain_fuse: feature channels mismatch");
    check(block >= 0 && block < kResBlocks && stage >= 0 && stage < 2,
          "adain_fuse: no such fused stage");
    auto fp = fusion_params(z2);
    return nn::adain(features, fp[static_cast<size_t>(block)][static_cast<size_t>(stage)].gamma,
                     fp[static_cast<size_t>(block)][static_cast<size_t>(stage)].beta, kAdainEps);
  }

  nn::Var<T> decode(const nn::Var<T>& z1_hat, const nn::Var<T>& z2_hat) const {
    check_latent(z1_hat);
    decode_calls_++;
    auto fp = fusion_params(z2_hat);
    auto h = dec_stem_(z1_hat);
    for (int b = 0; b < kResBlocks; b++) {
      auto r = dec_res_[b][0](h);
      r = nn::adain(r, fp[static_cast<size_t>(b)][0].gamma, fp[static_cast<size_t>(b)][0].beta,
                    kAdainEps, nn::Act::relu);
      r = dec_res_[b][1](r);
      r = nn::adain(r, fp[static_cast<size_t>(b)][1].gamma, fp[static_cast<size_t>(b)][1].beta, kAdainEps);
      h = nn::add(h, r);
    }
    for (int i = 0; i < 4; i++)
      h = dec_up_[i](nn::nearest_up(h, 2), nn::Act::leaky, kLReluSlope);
    return nn::sigmoid(dec_out_(h));
  }

  DiscriminatorOutput<T> discriminate(const nn::Var<T>& image,
                                      const nn::Var<T>& z1_hat) const {
    check_image(image);
    check_latent(z1_hat);
    auto cond = nn::concat_channels(image, nn::nearest_up(z1_hat, cfg_.downscale));
    return {disc_tower(disc1_, cond), disc_tower(disc2_, nn::avgpool2(cond))};
  }

  std::vector<nn::Var<T>> generator_params() const {
    return ps_.group_params({"encoder_r", "encoder_s", "hyper_enc", "hyper_dec",
                             "prior_hyper", "prior_z2", "fusion", "decoder"});
  }
  std::vector<nn::Var<T>> discriminator_params() const {
    return ps_.group_params({"disc1", "disc2"});
  }

 private:
  static constexpr T kAdainEps = T(1e-8);
  static constexpr T kInstanceNormEps = T(1e-5);

  void check_image(const nn::Var<T>& x) const {
    check_config(x->value.ndim() == 4 && x->value.dim(1) == 3 &&
                     x->value.dim(2) == cfg_.height && x->value.dim(3) == cfg_.width,
                 "image shape " + x->value.shape_str() + " does not match config");
  }
  void check_latent(const nn::Var<T>& z1) const {
    check_config(z1->value.ndim() == 4 && z1->value.dim(1) == cfg_.c1 &&
                     z1->value.dim(2) == cfg_.latent_height() &&
                     z1->value.dim(3) == cfg_.latent_width(),
                 "latent shape " + z1->value.shape_str() + " does not match config");
  }

  nn::Var<T> disc_tower(const std::array<nn::Conv2dLayer<T>, 5>& tower,
                        const nn::Var<T>& in) const {
    auto h = tower[0](in, nn::Act::leaky, kLReluSlope);
    for (int i = 1; i < 4; i++)
      h = nn::instance_norm(tower[i](h), kInstanceNormEps, nn::Act::leaky, kLReluSlope);
    return tower[4](h);
  }

  CodecConfig cfg_;
  nn::ParamStore<T> ps_;
  std::array<nn::Conv2dLayer<T>, 4> enc_r_, enc_s_;
  std::array<nn::Conv2dLayer<T>, 2> hyper_enc_, hyper_dec_;
  entropy::FactorizedModel<T> prior_hyper_, prior_z2_;
  std::array<nn::LinearLayer<T>, 3> fusion_;
  nn::Conv2dLayer<T> dec_stem_, dec_out_;
  std::array<std::array<nn::Conv2dLayer<T>, 2>, kResBlocks> dec_res_;
  std::array<nn::Conv2dLayer<T>, 4> dec_up_;
  std::array<nn::Conv2dLayer<T>, 5> disc1_, disc2_;
  mutable int64_t decode_calls_ = 0;
};

}  // namespace lgc::codec
