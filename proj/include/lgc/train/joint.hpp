#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lgc/analyzer/analyzer.hpp"
#include "lgc/codec/checkpoint.hpp"
#include "lgc/data/dataset.hpp"
#include "lgc/train/train_codec.hpp"

namespace lgc::train {

struct JointTrainConfig {
  int epochs = 10;
  int batch_size = 4;
  float lr = 1e-4f;  // fixed, both optimizers
  uint64_t seed = 0;
  losses::LossWeights weights;  // gamma_joint weights the analysis term

  void validate() const {
    check_config(epochs >= 1 && batch_size >= 1, "joint training counts must be positive");
    check_config(lr > 0, "joint learning rate must be positive");
    weights.validate();
  }
};

struct JointEpoch {
  int epoch = 0;
  double gen_total = 0, task = 0, disc = 0, rate_bpp = 0;
};

// Fine-tunes codec and analyzer together. The generator step optimizes
// codec objective + gamma * analysis objective over every non-discriminator
// codec group plus all analyzer parameters; the discriminator step alternates
// as in codec training. Joint training never starts from scratch: both
// networks must arrive pretrained (enforced by the checkpoint-loading entry).
template <typename T>
std::vector<JointEpoch> joint_finetune(codec::LayeredCodec<T>& model,
                                       analyzer::MultitaskAnalyzer<T>& net,
                                       const std::vector<data::DatasetItem>& items,
                                       const JointTrainConfig& cfg, TrainLog* log = nullptr,
                                       const losses::PerceptualFn<T>& perceptual = {}) {
  cfg.validate();
  check(!items.empty(), "joint fine-tuning needs a non-empty dataset");

  Rng root(cfg.seed);
  Rng sample_rng = root.child(1);
  Rng noise_rng = root.child(2);

  auto gen_params = model.generator_params();
  auto analyzer_params = net.params().all_params();
  std::vector<nn::Var<T>> joint_params = gen_params;
  joint_params.insert(joint_params.end(), analyzer_params.begin(), analyzer_params.end());
  auto disc_params = model.discriminator_params();

  nn::Adam<T> opt_g(static_cast<T>(cfg.lr));
  nn::Adam<T> opt_d(static_cast<T>(cfg.lr));

  const bool use_attrs = net.mode() != analyzer::TaskMode::seg;
  const bool use_seg = net.mode() != analyzer::TaskMode::cls;

  const size_t n = items.size();
  const int steps_per_epoch =
      static_cast<int>((n + static_cast<size_t>(cfg.batch_size) - 1) /
                       static_cast<size_t>(cfg.batch_size));

  std::vector<JointEpoch> epochs;
  for (int epoch = 1; epoch <= cfg.epochs; epoch++) {
    JointEpoch rec;
    rec.epoch = epoch;
    for (int step = 0; step < steps_per_epoch; step++) {
      std::vector<size_t> idx(static_cast<size_t>(cfg.batch_size));
      for (auto& i : idx) i = static_cast<size_t>(sample_rng.below(n));

      nn::Tensor<T> batch({static_cast<int>(idx.size()), 3, items[0].image.dim(1),
                           items[0].image.dim(2)});
      nn::Tensor<T> attrs({static_cast<int>(idx.size()),
                           static_cast<int>(items[0].attrs.size())});
      nn::TensorI masks({static_cast<int>(idx.size()), items[0].mask.dim(0),
                         items[0].mask.dim(1)});
      for (size_t b = 0; b < idx.size(); b++) {
        const auto& it = items[idx[b]];
        std::copy(it.image.data.begin(), it.image.data.end(),
                  batch.data.begin() + static_cast<int64_t>(b) * it.image.numel());
        for (size_t a = 0; a < it.attrs.size(); a++)
          attrs[static_cast<int64_t>(b) * static_cast<int64_t>(it.attrs.size()) +
                static_cast<int64_t>(a)] = static_cast<T>(it.attrs[a]);
        std::copy(it.mask.data.begin(), it.mask.data.end(),
                  masks.data.begin() + static_cast<int64_t>(b) * it.mask.numel());
      }

      CodecForward<T> f;
      {  // joint generator step
        nn::FreezeGuard<T> freeze(disc_params);
        f = codec_train_forward(model, std::move(batch), cfg.weights, noise_rng,
                                perceptual);
        auto gen = losses::generator_loss(f.rate_bpp, f.dist, f.d_fake, cfg.weights);
        auto pred = net.analyze(f.z1_noisy, f.z2_noisy);
        auto task = losses::multitask_loss(use_attrs ? pred.attr_logits : nn::Var<T>{}, attrs,
                                           use_seg ? pred.seg_logits : nn::Var<T>{}, masks,
                                           cfg.weights);
        auto total =
            nn::add(gen, nn::mul_scalar(task, static_cast<T>(cfg.weights.gamma_joint)));
        const double v = static_cast<double>(nn::value_of(total));
        if (!std::isfinite(v))
          throw TrainingDiverged("joint loss became non-finite in epoch " +
                                 std::to_string(epoch));
        rec.gen_total += static_cast<double>(nn::value_of(gen));
        rec.task += static_cast<double>(nn::value_of(task));
        rec.rate_bpp += static_cast<double>(nn::value_of(f.rate_bpp));
        nn::backward(total);
        opt_g.step(joint_params);
      }
      {  // discriminator step: reuse the fake scores from the shared forward
        // pass; barriers at the generator outputs keep its gradients from
        // flowing back into the generator or analyzer.
        auto d_real = model.discriminate(f.x, f.z1_noisy);
        auto d_loss = losses::discriminator_loss(d_real, f.d_fake, cfg.weights.gan_mode);
        const double v = static_cast<double>(nn::value_of(d_loss));
        if (!std::isfinite(v))
          throw TrainingDiverged("discriminator loss became non-finite in epoch " +
                                 std::to_string(epoch));
        rec.disc += v;
        nn::backward(d_loss, {f.x_hat, f.z1_noisy});
        opt_d.step(disc_params);
      }
    }
    rec.gen_total /= steps_per_epoch;
    rec.task /= steps_per_epoch;
    rec.disc /= steps_per_epoch;
    rec.rate_bpp /= steps_per_epoch;
    epochs.push_back(rec);
    if (log)
      log->record({{"schedule", "joint"},
                   {"epoch", rec.epoch},
                   {"gen_total", rec.gen_total},
                   {"task", rec.task},
                   {"disc", rec.disc},
                   {"rate_bpp", rec.rate_bpp},
                   {"lr", cfg.lr}});
  }
  return epochs;
}

// Checkpoint-loading entry: refuses to run without both pretrained halves.
inline void require_pretrained(const std::string& path, const std::string& which) {
  if (path.empty() || !std::filesystem::exists(path))
    throw ValidationError("joint fine-tuning requires a pretrained " + which +
                          " checkpoint; none found at '" + path + "'");
}

}  // namespace lgc::train
