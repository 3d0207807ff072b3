#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "lgc/analyzer/analyzer.hpp"
#include "lgc/codec/stream.hpp"
#include "lgc/data/dataset.hpp"
#include "lgc/losses/losses.hpp"
#include "lgc/optim.hpp"
#include "lgc/train/schedule.hpp"

namespace lgc::train {

struct AnalyzerTrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double lr0 = 1e-3;        // multiplied by decay_factor every decay_every epochs
  int decay_every = 10;
  double decay_factor = 0.1;
  uint64_t seed = 0;
  losses::LossWeights weights;

  void validate() const {
    check_config(epochs >= 1 && batch_size >= 1 && decay_every >= 1,
                 "analyzer training counts must be positive");
    check_config(lr0 > 0 && decay_factor > 0, "analyzer lr schedule must be positive");
    weights.validate();
  }
};

// Frozen-codec training set: eval-quantized latents with their labels. Valid
// to precompute because the codec never changes during analyzer training.
template <typename T>
struct LatentCache {
  std::vector<nn::Tensor<T>> z1, z2;      // per item: (c1,lh,lw) and (c2)
  std::vector<std::vector<float>> attrs;  // per item: C entries of 0/1
  std::vector<nn::TensorI> masks;         // per item: (H,W)
  size_t size() const { return z1.size(); }
};

template <typename T>
LatentCache<T> cache_latents(const codec::LayeredCodec<T>& model,
                             const std::vector<data::DatasetItem>& items) {
  LatentCache<T> cache;
  cache.z1.reserve(items.size());
  cache.z2.reserve(items.size());
  cache.attrs.reserve(items.size());
  cache.masks.reserve(items.size());
  for (const auto& it : items) {
    auto lat = codec::encode_latents(model, it.image);
    cache.z1.emplace_back(
        std::vector<int>{lat.z1_hat.dim(1), lat.z1_hat.dim(2), lat.z1_hat.dim(3)},
        lat.z1_hat.data);
    cache.z2.emplace_back(std::vector<int>{lat.z2_hat.dim(1)}, lat.z2_hat.data);
    cache.attrs.push_back(it.attrs);
    cache.masks.push_back(it.mask);
  }
  return cache;
}

struct AnalyzerEpoch {
  int epoch = 0;
  double lr = 0, loss = 0;
};

namespace detail {

template <typename T>
struct AnalyzerBatch {
  nn::Tensor<T> z1, z2, attrs;
  nn::TensorI masks;
};

template <typename T>
AnalyzerBatch<T> gather_analyzer_batch(const LatentCache<T>& cache,
                                       const std::vector<size_t>& idx) {
  const auto& z1s = cache.z1[idx[0]].shape;
  const int b = static_cast<int>(idx.size());
  AnalyzerBatch<T> out;
  out.z1 = nn::Tensor<T>({b, z1s[0], z1s[1], z1s[2]});
  out.z2 = nn::Tensor<T>({b, cache.z2[idx[0]].dim(0)});
  out.attrs = nn::Tensor<T>({b, static_cast<int>(cache.attrs[idx[0]].size())});
  const auto& ms = cache.masks[idx[0]].shape;
  out.masks = nn::TensorI({b, ms[0], ms[1]});
  for (int i = 0; i < b; i++) {
    const size_t k = idx[static_cast<size_t>(i)];
    std::copy(cache.z1[k].data.begin(), cache.z1[k].data.end(),
              out.z1.data.begin() + static_cast<int64_t>(i) * cache.z1[k].numel());
    std::copy(cache.z2[k].data.begin(), cache.z2[k].data.end(),
              out.z2.data.begin() + static_cast<int64_t>(i) * cache.z2[k].numel());
    for (size_t a = 0; a < cache.attrs[k].size(); a++)
      out.attrs[static_cast<int64_t>(i) * static_cast<int64_t>(cache.attrs[k].size()) +
                static_cast<int64_t>(a)] = static_cast<T>(cache.attrs[k][a]);
    std::copy(cache.masks[k].data.begin(), cache.masks[k].data.end(),
              out.masks.data.begin() + static_cast<int64_t>(i) * cache.masks[k].numel());
  }
  return out;
}

}  // namespace detail

// Momentum-free SGD on the analyzer head over cached latents. The codec is
// input-only here; its parameter hash is asserted unchanged.
template <typename T>
std::vector<AnalyzerEpoch> train_analyzer(analyzer::MultitaskAnalyzer<T>& net,
                                          const codec::LayeredCodec<T>& model,
                                          const std::vector<data::DatasetItem>& items,
                                          const AnalyzerTrainConfig& cfg,
                                          TrainLog* log = nullptr) {
  cfg.validate();
  check(!items.empty(), "analyzer training needs a non-empty dataset");
  const uint64_t codec_hash_before = model.params().group_hash();

  auto cache = cache_latents(model, items);
  auto params = net.params().all_params();
  Rng root(cfg.seed);

  std::vector<AnalyzerEpoch> epochs;
  epochs.reserve(static_cast<size_t>(cfg.epochs));
  std::vector<size_t> order(cache.size());
  std::iota(order.begin(), order.end(), size_t{0});

  const bool use_attrs = net.mode() != analyzer::TaskMode::seg;
  const bool use_seg = net.mode() != analyzer::TaskMode::cls;

  for (int epoch = 1; epoch <= cfg.epochs; epoch++) {
    const double lr = step_lr(cfg.lr0, epoch, cfg.decay_every, cfg.decay_factor);
    nn::Sgd<T> opt(static_cast<T>(lr));
    Rng shuffle_rng = root.child(static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<size_t> idx(order.begin() + static_cast<ptrdiff_t>(start),
                              order.begin() + static_cast<ptrdiff_t>(end));
      auto batch = detail::gather_analyzer_batch(cache, idx);
      auto pred = net.analyze(nn::leaf(std::move(batch.z1)), nn::leaf(std::move(batch.z2)));
      auto loss = losses::multitask_loss(use_attrs ? pred.attr_logits : nn::Var<T>{},
                                         batch.attrs, use_seg ? pred.seg_logits : nn::Var<T>{},
                                         batch.masks, cfg.weights);
      const double v = static_cast<double>(nn::value_of(loss));
      if (!std::isfinite(v))
        throw TrainingDiverged("analyzer loss became non-finite in epoch " +
                               std::to_string(epoch));
      nn::backward(loss);
      opt.step(params);
      loss_sum += v;
      batches++;
    }

    AnalyzerEpoch rec{epoch, lr, loss_sum / std::max(1, batches)};
    epochs.push_back(rec);
    if (log)
      log->record({{"schedule", "analyzer"},
                   {"epoch", rec.epoch},
                   {"lr", rec.lr},
                   {"loss", rec.loss}});
  }

  check(model.params().group_hash() == codec_hash_before,
        "codec parameters changed during analyzer training");
  return epochs;
}

}  // namespace lgc::train
