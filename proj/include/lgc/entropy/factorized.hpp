#pragma once

#include <array>

#include "lgc/entropy/gaussian.hpp"
#include "lgc/layers.hpp"

namespace lgc::entropy {

// Non-parametric per-channel density over integer symbols. Each channel owns
// a small monotone stack of four affine stages with softplus-positive
// weights; the first three are followed by u = z + tanh(a) * tanh(z) with
// |tanh(a)| < 1 and the last by a sigmoid. Every stage is strictly
// increasing, so c(x) is a valid CDF for any parameter values and interval
// masses c(x + 1/2) - c(x - 1/2) are proper probabilities by construction.
template <typename T>
class FactorizedModel {
 public:
  static constexpr int kStages = 4;
  static constexpr std::array<int, 4> kIn = {1, 3, 3, 3};
  static constexpr std::array<int, 4> kOut = {3, 3, 3, 1};

  FactorizedModel() = default;

  FactorizedModel(nn::ParamStore<T>& ps, const std::string& prefix, int channels,
                  Rng& rng, double init_scale = 10.0)
      : channels_(channels) {
    check(channels >= 1, "factorized model needs at least one channel");
    const double scale = std::pow(init_scale, 1.0 / kStages);
    for (int k = 0; k < kStages; k++) {
      // softplus(h0) = 1 / (scale * width): composed over the stages this
      // spreads the initial CDF transition over a span of roughly init_scale,
      // giving every nearby integer usable mass before any training.
      const double h0 = std::log(std::expm1(1.0 / (scale * kOut[k])));
      nn::Tensor<T> H({channels, kOut[k], kIn[k]}, static_cast<T>(h0));
      nn::Tensor<T> b({channels, kOut[k]});
      for (int64_t i = 0; i < b.numel(); i++)
        b[i] = static_cast<T>(rng.uniform(-0.5, 0.5));
      H_[k] = ps.add(prefix + ".h" + std::to_string(k), std::move(H));
      b_[k] = ps.add(prefix + ".b" + std::to_string(k), std::move(b));
      if (k + 1 < kStages)
        a_[k] = ps.add(prefix + ".a" + std::to_string(k),
                       nn::Tensor<T>({channels, kOut[k]}));
    }
  }

  int channels() const { return channels_; }

  // CDF value at real-valued v for one channel, evaluated in double.
  double cdf(int channel, double v) const {
    check(channel >= 0 && channel < channels_, "factorized cdf: bad channel");
    Params p = params();
    Trace tr;
    return forward(p, channel, v, tr);
  }

  // Interval masses for integer symbols lo..hi inclusive (no clamping).
  std::vector<double> pmf(int channel, int lo, int hi) const {
    check(hi >= lo, "factorized pmf: empty alphabet");
    check(channel >= 0 && channel < channels_, "factorized pmf: bad channel");
    Params p = params();
    Trace tr;
    std::vector<double> out;
    out.reserve(static_cast<size_t>(hi - lo + 1));
    double prev = forward(p, channel, lo - 0.5, tr);
    for (int s = lo; s <= hi; s++) {
      double next = forward(p, channel, s + 0.5, tr);
      out.push_back(next - prev);
      prev = next;
    }
    return out;
  }

  // Elementwise interval likelihood of a (N,C) or (N,C,H,W) tensor whose
  // channel dimension matches this model. Clamped entries get zero gradient.
  nn::Var<T> likelihood(const nn::Var<T>& x, bool clamp = true) const {
    check(x->value.ndim() >= 2 && x->value.dim(1) == channels_,
          "factorized likelihood: channel mismatch");
    const int64_t n = x->value.numel();
    const int64_t inner =
        n / (static_cast<int64_t>(x->value.dim(0)) * channels_);
    nn::Tensor<T> out(x->value.shape);
    {
      Params p = params();
      Trace tr;
      for (int64_t i = 0; i < n; i++) {
        const int c = static_cast<int>((i / inner) % channels_);
        const double v = static_cast<double>(x->value[i]);
        double mass = forward(p, c, v + 0.5, tr) - forward(p, c, v - 0.5, tr);
        if (clamp && mass < kProbFloor) mass = kProbFloor;
        out[i] = static_cast<T>(mass);
      }
    }
    std::vector<nn::Var<T>> parents{x};
    for (int k = 0; k < kStages; k++) {
      parents.push_back(H_[k]);
      parents.push_back(b_[k]);
    }
    for (int k = 0; k + 1 < kStages; k++) parents.push_back(a_[k]);
    const int channels = channels_;
    return nn::make_op<T>(
        std::move(out), std::move(parents),
        [channels, inner, clamp](nn::Node<T>& self) {
          const auto& x = self.parents[0];
          Params p;
          Grads g;
          for (int k = 0; k < kStages; k++) {
            const auto& H = self.parents[1 + 2 * k];
            const auto& b = self.parents[2 + 2 * k];
            p.H[k] = H->value.ptr();
            p.b[k] = b->value.ptr();
            g.dH[k] = H->requires_grad ? nn::grad_buf(H).ptr() : nullptr;
            g.db[k] = b->requires_grad ? nn::grad_buf(b).ptr() : nullptr;
          }
          for (int k = 0; k + 1 < kStages; k++) {
            const auto& a = self.parents[9 + k];
            p.a[k] = a->value.ptr();
            g.da[k] = a->requires_grad ? nn::grad_buf(a).ptr() : nullptr;
          }
          nn::Tensor<T>* dx = x->requires_grad ? &nn::grad_buf(x) : nullptr;
          Trace tr;
          for (int64_t i = 0; i < self.grad.numel(); i++) {
            if (clamp && static_cast<double>(self.value[i]) <= kProbFloor)
              continue;
            const double gi = static_cast<double>(self.grad[i]);
            if (gi == 0.0) continue;
            const int c = static_cast<int>((i / inner) % channels);
            const double v = static_cast<double>(x->value[i]);
            double dv = 0.0;
            forward(p, c, v + 0.5, tr);
            dv += backward(p, g, c, tr, gi);
            forward(p, c, v - 0.5, tr);
            dv += backward(p, g, c, tr, -gi);
            if (dx) (*dx)[i] += static_cast<T>(dv);
          }
        });
  }

 private:
  struct Params {
    std::array<const T*, 4> H{}, b{};
    std::array<const T*, 3> a{};
  };
  struct Grads {
    std::array<T*, 4> dH{}, db{};
    std::array<T*, 3> da{};
  };
  // One endpoint evaluation: stage inputs and pre-activations, plus the
  // output probability, recorded for the backward sweep.
  struct Trace {
    std::array<std::array<double, 3>, 4> in;  // input vector of each stage
    std::array<std::array<double, 3>, 4> z;   // pre-activation of each stage
    double c = 0.0;                           // final sigmoid output
  };

  static double softplus_d(double x) {
    return x > 20.0 ? x : std::log1p(std::exp(x));
  }
  static double sigmoid_d(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  }

  Params params() const {
    Params p;
    for (int k = 0; k < kStages; k++) {
      p.H[k] = H_[k]->value.ptr();
      p.b[k] = b_[k]->value.ptr();
    }
    for (int k = 0; k + 1 < kStages; k++) p.a[k] = a_[k]->value.ptr();
    return p;
  }

  static double forward(const Params& p, int channel, double v, Trace& tr) {
    std::array<double, 3> cur{v, 0.0, 0.0};
    for (int k = 0; k < kStages; k++) {
      const int din = kIn[k], dout = kOut[k];
      const T* Hp = p.H[k] + static_cast<int64_t>(channel) * dout * din;
      const T* bp = p.b[k] + static_cast<int64_t>(channel) * dout;
      tr.in[k] = cur;
      std::array<double, 3> z{};
      for (int r = 0; r < dout; r++) {
        double acc = static_cast<double>(bp[r]);
        for (int d = 0; d < din; d++)
          acc += softplus_d(static_cast<double>(Hp[r * din + d])) * cur[d];
        z[r] = acc;
      }
      tr.z[k] = z;
      if (k + 1 == kStages) {
        tr.c = sigmoid_d(z[0]);
        return tr.c;
      }
      const T* ap = p.a[k] + static_cast<int64_t>(channel) * dout;
      for (int r = 0; r < dout; r++)
        cur[r] = z[r] + std::tanh(static_cast<double>(ap[r])) * std::tanh(z[r]);
    }
    return 0.0;  // unreachable
  }

  // Backward for one endpoint with upstream weight w = dL/d c(v).
  // Accumulates parameter gradients and returns dL/dv.
  static double backward(const Params& p, const Grads& g, int channel,
                         const Trace& tr, double w) {
    std::array<double, 3> delta{w * tr.c * (1.0 - tr.c), 0.0, 0.0};
    for (int k = kStages - 1; k >= 0; k--) {
      const int din = kIn[k], dout = kOut[k];
      const T* Hp = p.H[k] + static_cast<int64_t>(channel) * dout * din;
      T* dHp = g.dH[k] ? g.dH[k] + static_cast<int64_t>(channel) * dout * din
                       : nullptr;
      T* dbp = g.db[k] ? g.db[k] + static_cast<int64_t>(channel) * dout : nullptr;
      std::array<double, 3> din_grad{};
      for (int r = 0; r < dout; r++) {
        if (dbp) dbp[r] += static_cast<T>(delta[r]);
        for (int d = 0; d < din; d++) {
          const double hraw = static_cast<double>(Hp[r * din + d]);
          if (dHp)
            dHp[r * din + d] +=
                static_cast<T>(delta[r] * tr.in[k][d] * sigmoid_d(hraw));
          din_grad[d] += softplus_d(hraw) * delta[r];
        }
      }
      if (k == 0) return din_grad[0];
      // Through u_{k-1} = z + tanh(a) * tanh(z) of the previous stage.
      const int dprev = kOut[k - 1];
      const T* ap = p.a[k - 1] + static_cast<int64_t>(channel) * dprev;
      T* dap = g.da[k - 1]
                   ? g.da[k - 1] + static_cast<int64_t>(channel) * dprev
                   : nullptr;
      for (int r = 0; r < dprev; r++) {
        const double t = std::tanh(tr.z[k - 1][r]);
        const double a = std::tanh(static_cast<double>(ap[r]));
        if (dap) dap[r] += static_cast<T>(din_grad[r] * t * (1.0 - a * a));
        delta[r] = din_grad[r] * (1.0 + a * (1.0 - t * t));
      }
    }
    return 0.0;  // unreachable
  }

  int channels_ = 0;
  std::array<nn::Var<T>, 4> H_, b_;
  std::array<nn::Var<T>, 3> a_;
};

}  // namespace lgc::entropy
