#pragma once

#include <string>

#include "lgc/layers.hpp"

namespace lgc::analyzer {

// Task-space shape of the analysis heads. Latent geometry (c1/c2) comes from
// the codec configuration at construction time.
struct AnalyzerConfig {
  int num_attributes = 8;  // C binary attributes
  int num_seg_classes = 5;  // S segmentation classes
  int trunk_blocks = 4;
  int trunk_width = 64;

  void validate() const {
    check_config(num_attributes >= 1, "analyzer needs at least one attribute");
    check_config(num_seg_classes >= 2, "segmentation needs at least two classes");
    check_config(trunk_blocks >= 1 && trunk_width >= 1, "trunk must be non-empty");
  }
};

enum class TaskMode { multi, cls, seg };

inline TaskMode task_mode_from_string(const std::string& s) {
  if (s == "multi") return TaskMode::multi;
  if (s == "cls") return TaskMode::cls;
  if (s == "seg") return TaskMode::seg;
  throw ConfigError("unknown task mode: " + s + " (expected multi|cls|seg)");
}

template <typename T>
struct TaskPrediction {
  nn::Var<T> attr_logits;  // (N, C); empty for the seg-only variant
  nn::Var<T> seg_logits;   // (N, S, 16*lh, 16*lw); empty for the cls-only variant
};

// Multi-task head operating directly on quantized latents: a shared residual
// trunk over the grid latent with the global vector injected once by AdaIN at
// the trunk entry, then an attribute head (pool + linear) and a segmentation
// head (four 2x upsample+conv stages back to pixel resolution). By
// construction this class never touches the image decoder.
template <typename T>
class MultitaskAnalyzer {
 public:
  MultitaskAnalyzer(int c1, int c2, const AnalyzerConfig& cfg, uint64_t seed,
                    TaskMode mode = TaskMode::multi)
      : cfg_(cfg), c1_(c1), c2_(c2), mode_(mode) {
    cfg_.validate();
    check_config(c1 >= 1 && c2 >= 1, "latent channel counts must be positive");
    const int w = cfg_.trunk_width;
    Rng root(seed);
    {
      Rng r = root.child(1);
      entry_ = nn::Conv2dLayer<T>(ps_, "analyzer.entry", c1, w, 3, 1, 1, r, 0.0);
      mod_[0] = nn::LinearLayer<T>(ps_, "analyzer.mod0", c2, w, r);
      mod_[1] = nn::LinearLayer<T>(ps_, "analyzer.mod1", w, 2 * w, r, 0.0, /*zero_init=*/true);
      blocks_.resize(static_cast<size_t>(cfg_.trunk_blocks));
      for (int b = 0; b < cfg_.trunk_blocks; b++) {
        blocks_[static_cast<size_t>(b)][0] = nn::Conv2dLayer<T>(
            ps_, "analyzer.block" + std::to_string(b) + "a", w, w, 3, 1, 1, r, 0.0);
        blocks_[static_cast<size_t>(b)][1] = nn::Conv2dLayer<T>(
            ps_, "analyzer.block" + std::to_string(b) + "b", w, w, 3, 1, 1, r, 0.0);
      }
    }
    if (mode_ != TaskMode::seg) {
      Rng r = root.child(2);
      cls_ = nn::LinearLayer<T>(ps_, "analyzer.cls", w, cfg_.num_attributes, r);
    }
    if (mode_ != TaskMode::cls) {
      Rng r = root.child(3);
      const int sw[5] = {w, w, w / 2, w / 4, cfg_.num_seg_classes};
      for (int i = 0; i < 4; i++)
        seg_[i] = nn::Conv2dLayer<T>(ps_, "analyzer.seg" + std::to_string(i), sw[i],
                                     sw[i + 1], 3, 1, 1, r, i < 3 ? 0.2 : 0.0);
    }
  }

  const AnalyzerConfig& config() const { return cfg_; }
  TaskMode mode() const { return mode_; }
  nn::ParamStore<T>& params() { return ps_; }
  const nn::ParamStore<T>& params() const { return ps_; }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, v] : ps_.items()) n += v->value.numel();
    return n;
  }

  TaskPrediction<T> analyze(const nn::Var<T>& z1_hat, const nn::Var<T>& z2_hat) const {
    check_config(z1_hat->value.ndim() == 4 && z1_hat->value.dim(1) == c1_,
                 "grid latent must be (N, " + std::to_string(c1_) + ", h, w), got " +
                     z1_hat->value.shape_str());
    check_config(z2_hat->value.ndim() == 2 && z2_hat->value.dim(1) == c2_ &&
                     z2_hat->value.dim(0) == z1_hat->value.dim(0),
                 "vector latent must be (N, " + std::to_string(c2_) + ")");
    const int w = cfg_.trunk_width;

    // trunk entry with one global modulation, then post-activation blocks
    auto m = mod_[1](nn::relu(mod_[0](z2_hat)));
    auto gamma = nn::add_scalar(nn::slice_channels(m, 0, w), T(1));
    auto beta = nn::slice_channels(m, w, 2 * w);
    auto h = nn::adain(entry_(z1_hat), gamma, beta, T(1e-8), nn::Act::relu);
    for (const auto& blk : blocks_)
      h = nn::relu(nn::add(h, blk[1](blk[0](h, nn::Act::relu))));

    TaskPrediction<T> out;
    if (mode_ != TaskMode::seg) out.attr_logits = cls_(nn::global_avg_pool(h));
    if (mode_ != TaskMode::cls) {
      auto s = h;
      for (int i = 0; i < 4; i++)
        s = seg_[i](nn::nearest_up(s, 2), i < 3 ? nn::Act::leaky : nn::Act::none, T(0.2));
      out.seg_logits = s;
    }
    return out;
  }

 private:
  AnalyzerConfig cfg_;
  int c1_, c2_;
  TaskMode mode_;
  nn::ParamStore<T> ps_;
  nn::Conv2dLayer<T> entry_;
  std::array<nn::LinearLayer<T>, 2> mod_;
  std::vector<std::array<nn::Conv2dLayer<T>, 2>> blocks_;
  nn::LinearLayer<T> cls_;
  std::array<nn::Conv2dLayer<T>, 4> seg_;
};

}  // namespace lgc::analyzer
