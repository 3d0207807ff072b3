#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <memory>
#include <utility>

#include "lgc/autodiff.hpp"

// Convolution and resampling ops. conv2d lowers to a single batched GEMM via
// im2col; the column buffer is kept for the backward pass.

namespace lgc::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// Output-column range [lo, hi) whose source index ow*stride - pad + kj lands
// inside [0, W). Hoisting this out of the inner loop removes the per-element
// bounds branch and enables a contiguous copy for stride 1.
inline std::pair<int, int> valid_ow_range(int W, int Wo, int stride, int pad, int kj) {
  const int lo = pad > kj ? (pad - kj + stride - 1) / stride : 0;
  const int last_src = W - 1 - kj + pad;
  const int hi = last_src < 0 ? 0 : std::min(Wo, last_src / stride + 1);
  return {lo, std::max(lo, hi)};
}

template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, int Ho, int Wo,
            T* cp) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int64_t P = static_cast<int64_t>(Ho) * Wo;
  const int64_t NP = N * P;
  for (int n = 0; n < N; n++) {
    for (int c = 0; c < C; c++) {
      const T* xp = x.ptr() + (static_cast<int64_t>(n) * C + c) * H * W;
      for (int ki = 0; ki < kh; ki++) {
        for (int kj = 0; kj < kw; kj++) {
          const int64_t k = (static_cast<int64_t>(c) * kh + ki) * kw + kj;
          T* row = cp + k * NP + static_cast<int64_t>(n) * P;
          const auto [lo, hi] = valid_ow_range(W, Wo, stride, pad, kj);
          for (int oh = 0; oh < Ho; oh++) {
            const int ih = oh * stride - pad + ki;
            T* dst = row + static_cast<int64_t>(oh) * Wo;
            if (ih < 0 || ih >= H) {
              std::fill_n(dst, Wo, T{});
              continue;
            }
            const T* src = xp + static_cast<int64_t>(ih) * W;
            std::fill_n(dst, lo, T{});
            if (stride == 1) {
              std::copy(src + lo - pad + kj, src + hi - pad + kj, dst + lo);
            } else {
              for (int ow = lo; ow < hi; ow++) dst[ow] = src[ow * stride - pad + kj];
            }
            std::fill(dst + hi, dst + Wo, T{});
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cp, int N, int C, int H, int W, int kh, int kw,
                int stride, int pad, int Ho, int Wo, Tensor<T>& dx) {
  const int64_t P = static_cast<int64_t>(Ho) * Wo;
  const int64_t NP = N * P;
  for (int n = 0; n < N; n++) {
    for (int c = 0; c < C; c++) {
      T* xp = dx.ptr() + (static_cast<int64_t>(n) * C + c) * H * W;
      for (int ki = 0; ki < kh; ki++) {
        for (int kj = 0; kj < kw; kj++) {
          const int64_t k = (static_cast<int64_t>(c) * kh + ki) * kw + kj;
          const T* row = cp + k * NP + static_cast<int64_t>(n) * P;
          const auto [lo, hi] = valid_ow_range(W, Wo, stride, pad, kj);
          for (int oh = 0; oh < Ho; oh++) {
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= H) continue;
            const T* src = row + static_cast<int64_t>(oh) * Wo;
            T* dst = xp + static_cast<int64_t>(ih) * W - pad + kj;
            for (int ow = lo; ow < hi; ow++) dst[ow * stride] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x (N,Cin,H,W) * w (Cout,Cin,kh,kw) + b (Cout, optional) -> (N,Cout,Ho,Wo)
// `act` fuses an optional relu / leaky-relu epilogue into the output write;
// the result is bit-identical to applying the activation as a separate op.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad,
              Act act = Act::none, T slope = T(0)) {
  check(x->value.ndim() == 4 && w->value.ndim() == 4, "conv2d: expects NCHW input and OIHW weight");
  const int N = x->value.dim(0), Cin = x->value.dim(1);
  const int H = x->value.dim(2), W = x->value.dim(3);
  const int Cout = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  check(w->value.dim(1) == Cin, "conv2d: channel mismatch");
  check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  check(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than padded input");
  const int64_t K = static_cast<int64_t>(Cin) * kh * kw;
  const int64_t P = static_cast<int64_t>(Ho) * Wo;
  const int64_t NP = N * P;

  // Deliberately uninitialized scratch: im2col writes every element, including
  // the padding zeros. shared_ptr keeps the backward closure copyable.
  std::shared_ptr<T[]> col(new T[static_cast<size_t>(K * NP)]);
  detail::im2col(x->value, kh, kw, stride, pad, Ho, Wo, col.get());

  RowMat<T> y(Cout, NP);
  {
    Eigen::Map<const RowMat<T>> wm(w->value.ptr(), Cout, K);
    Eigen::Map<const RowMat<T>> cm(col.get(), K, NP);
    y.noalias() = wm * cm;
  }
  Tensor<T> out = Tensor<T>::uninit({N, Cout, Ho, Wo});
  for (int n = 0; n < N; n++) {
    for (int co = 0; co < Cout; co++) {
      const T bias = b ? b->value[co] : T{};
      const T* src = y.data() + static_cast<int64_t>(co) * NP + static_cast<int64_t>(n) * P;
      T* dst = out.ptr() + (static_cast<int64_t>(n) * Cout + co) * P;
      // Epilogues use the same max form as the standalone activation ops, so
      // the fused output is bit-identical to the two-op composition.
      switch (act) {
        case Act::none:
          for (int64_t p = 0; p < P; p++) dst[p] = src[p] + bias;
          break;
        case Act::relu:
          for (int64_t p = 0; p < P; p++) dst[p] = std::max(src[p] + bias, T(0));
          break;
        case Act::leaky:
          for (int64_t p = 0; p < P; p++) {
            const T v = src[p] + bias;
            dst[p] = std::max(v, slope * v);
          }
          break;
      }
    }
  }

  std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_op<T>(
      std::move(out), std::move(parents),
      [col = std::move(col), N, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K, P, NP, act,
       slope](Node<T>& self) {
        const auto& x = self.parents[0];
        const auto& w = self.parents[1];
        const bool has_b = self.parents.size() > 2;
        // reassemble gradient as (Cout, N*P), folding in the activation mask
        RowMat<T> gy(Cout, NP);
        for (int n = 0; n < N; n++)
          for (int co = 0; co < Cout; co++) {
            const T* g = self.grad.ptr() + (static_cast<int64_t>(n) * Cout + co) * P;
            T* dst = gy.data() + static_cast<int64_t>(co) * NP + static_cast<int64_t>(n) * P;
            if (act == Act::none) {
              std::copy_n(g, P, dst);
            } else {
              const T* v = self.value.ptr() + (static_cast<int64_t>(n) * Cout + co) * P;
              const T s = act == Act::relu ? T(0) : slope;
              for (int64_t p = 0; p < P; p++) dst[p] = v[p] > T(0) ? g[p] : g[p] * s;
            }
          }
        if (has_b && self.parents[2]->requires_grad) {
          Tensor<T>& db = grad_buf(self.parents[2]);
          for (int co = 0; co < Cout; co++) {
            double acc = 0.0;
            const T* row = gy.data() + static_cast<int64_t>(co) * NP;
            for (int64_t i = 0; i < NP; i++) acc += static_cast<double>(row[i]);
            db[co] += static_cast<T>(acc);
          }
        }
        if (w->requires_grad) {
          Eigen::Map<RowMat<T>> dw(grad_buf(w).ptr(), Cout, K);
          Eigen::Map<const RowMat<T>> cm(col.get(), K, NP);
          dw.noalias() += gy * cm.transpose();
        }
        if (x->requires_grad) {
          std::unique_ptr<T[]> dcol(new T[static_cast<size_t>(K * NP)]);
          Eigen::Map<RowMat<T>> dcm(dcol.get(), K, NP);
          Eigen::Map<const RowMat<T>> wm(w->value.ptr(), Cout, K);
          dcm.noalias() = wm.transpose() * gy;
          detail::col2im_add(dcol.get(), N, Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                             grad_buf(x));
        }
      });
}

// 2x2 average pooling, stride 2. Requires even spatial dims.
template <typename T>
Var<T> avgpool2(const Var<T>& x) {
  check(x->value.ndim() == 4, "avgpool2: expects NCHW");
  const int N = x->value.dim(0), C = x->value.dim(1);
  const int H = x->value.dim(2), W = x->value.dim(3);
  check(H % 2 == 0 && W % 2 == 0, "avgpool2: odd spatial extent");
  const int Ho = H / 2, Wo = W / 2;
  Tensor<T> out = Tensor<T>::uninit({N, C, Ho, Wo});
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; nc++) {
    const T* src = x->value.ptr() + nc * H * W;
    T* dst = out.ptr() + nc * Ho * Wo;
    for (int i = 0; i < Ho; i++)
      for (int j = 0; j < Wo; j++)
        dst[static_cast<int64_t>(i) * Wo + j] =
            (src[static_cast<int64_t>(2 * i) * W + 2 * j] +
             src[static_cast<int64_t>(2 * i) * W + 2 * j + 1] +
             src[static_cast<int64_t>(2 * i + 1) * W + 2 * j] +
             src[static_cast<int64_t>(2 * i + 1) * W + 2 * j + 1]) /
            T(4);
  }
  return make_op<T>(std::move(out), {x}, [N, C, H, W, Ho, Wo](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& dx = grad_buf(self.parents[0]);
    const Tensor<T>& g = self.grad;
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; nc++) {
      const T* gp = g.ptr() + nc * Ho * Wo;
      T* dp = dx.ptr() + nc * H * W;
      for (int i = 0; i < Ho; i++)
        for (int j = 0; j < Wo; j++) {
          T v = gp[static_cast<int64_t>(i) * Wo + j] / T(4);
          dp[static_cast<int64_t>(2 * i) * W + 2 * j] += v;
          dp[static_cast<int64_t>(2 * i) * W + 2 * j + 1] += v;
          dp[static_cast<int64_t>(2 * i + 1) * W + 2 * j] += v;
          dp[static_cast<int64_t>(2 * i + 1) * W + 2 * j + 1] += v;
        }
    }
  });
}

// Nearest-neighbour upsampling by an integer factor.
template <typename T>
Var<T> nearest_up(const Var<T>& x, int factor) {
  check(x->value.ndim() == 4, "nearest_up: expects NCHW");
  check(factor >= 1, "nearest_up: factor must be >= 1");
  const int N = x->value.dim(0), C = x->value.dim(1);
  const int H = x->value.dim(2), W = x->value.dim(3);
  const int Ho = H * factor, Wo = W * factor;
  Tensor<T> out = Tensor<T>::uninit({N, C, Ho, Wo});
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; nc++) {
    const T* src = x->value.ptr() + nc * H * W;
    T* dst = out.ptr() + nc * Ho * Wo;
    for (int i = 0; i < Ho; i++) {
      const T* srow = src + static_cast<int64_t>(i / factor) * W;
      T* drow = dst + static_cast<int64_t>(i) * Wo;
      for (int j = 0; j < Wo; j++) drow[j] = srow[j / factor];
    }
  }
  return make_op<T>(std::move(out), {x}, [N, C, H, W, factor](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& dx = grad_buf(self.parents[0]);
    const Tensor<T>& g = self.grad;
    const int Ho = H * factor, Wo = W * factor;
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; nc++) {
      const T* gp = g.ptr() + nc * Ho * Wo;
      T* dp = dx.ptr() + nc * H * W;
      for (int i = 0; i < Ho; i++)
        for (int j = 0; j < Wo; j++)
          dp[static_cast<int64_t>(i / factor) * W + j / factor] +=
              gp[static_cast<int64_t>(i) * Wo + j];
    }
  });
}

// (N,C,H,W) -> (N,C) spatial mean.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  check(x->value.ndim() == 4, "global_avg_pool: expects NCHW");
  const int N = x->value.dim(0), C = x->value.dim(1);
  const int64_t HW = static_cast<int64_t>(x->value.dim(2)) * x->value.dim(3);
  check(HW > 0, "global_avg_pool: empty spatial extent");
  Tensor<T> out = Tensor<T>::uninit({N, C});
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; nc++) {
    const T* src = x->value.ptr() + nc * HW;
    double acc = 0.0;
    for (int64_t i = 0; i < HW; i++) acc += static_cast<double>(src[i]);
    out[nc] = static_cast<T>(acc / static_cast<double>(HW));
  }
  return make_op<T>(std::move(out), {x}, [N, C, HW](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& dx = grad_buf(self.parents[0]);
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; nc++) {
      T v = self.grad[nc] / static_cast<T>(HW);
      T* dp = dx.ptr() + nc * HW;
      for (int64_t i = 0; i < HW; i++) dp[i] += v;
    }
  });
}

// Separable 2-d correlation with a symmetric 1-d tap vector, valid region
// only: (N,C,H,W) -> (N,C,H-L+1,W-L+1).
template <typename T>
Var<T> blur_valid(const Var<T>& x, const std::vector<T>& taps) {
  check(x->value.ndim() == 4, "blur_valid: expects NCHW");
  const int L = static_cast<int>(taps.size());
  const int N = x->value.dim(0), C = x->value.dim(1);
  const int H = x->value.dim(2), W = x->value.dim(3);
  check(H >= L && W >= L, "blur_valid: input smaller than window");
  const int Ho = H - L + 1, Wo = W - L + 1;
  Tensor<T> tmp({N, C, H, Wo});
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; nc++) {
    const T* src = x->value.ptr() + nc * H * W;
    T* dst = tmp.ptr() + nc * H * Wo;
    for (int i = 0; i < H; i++)
      for (int j = 0; j < Wo; j++) {
        double acc = 0.0;
        for (int u = 0; u < L; u++)
          acc += static_cast<double>(src[static_cast<int64_t>(i) * W + j + u]) * taps[u];
        dst[static_cast<int64_t>(i) * Wo + j] = static_cast<T>(acc);
      }
  }
  Tensor<T> out = Tensor<T>::uninit({N, C, Ho, Wo});
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; nc++) {
    const T* src = tmp.ptr() + nc * H * Wo;
    T* dst = out.ptr() + nc * Ho * Wo;
    for (int i = 0; i < Ho; i++)
      for (int j = 0; j < Wo; j++) {
        double acc = 0.0;
        for (int v = 0; v < L; v++)
          acc += static_cast<double>(src[static_cast<int64_t>(i + v) * Wo + j]) * taps[v];
        dst[static_cast<int64_t>(i) * Wo + j] = static_cast<T>(acc);
      }
  }
  return make_op<T>(std::move(out), {x}, [taps, N, C, H, W, Ho, Wo, L](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    const Tensor<T>& g = self.grad;
    Tensor<T>& dx = grad_buf(self.parents[0]);
    Tensor<T> dtmp({N, C, H, Wo});
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; nc++) {
      const T* gp = g.ptr() + nc * Ho * Wo;
      T* dt = dtmp.ptr() + nc * H * Wo;
      for (int i = 0; i < H; i++)
        for (int j = 0; j < Wo; j++) {
          double acc = 0.0;
          for (int v = 0; v < L; v++) {
            const int io = i - v;
            if (io >= 0 && io < Ho)
              acc += static_cast<double>(gp[static_cast<int64_t>(io) * Wo + j]) * taps[v];
          }
          dt[static_cast<int64_t>(i) * Wo + j] = static_cast<T>(acc);
        }
      T* dp = dx.ptr() + nc * H * W;
      for (int i = 0; i < H; i++)
        for (int j = 0; j < W; j++) {
          double acc = 0.0;
          for (int u = 0; u < L; u++) {
            const int jo = j - u;
            if (jo >= 0 && jo < Wo)
              acc += static_cast<double>(dt[static_cast<int64_t>(i) * Wo + jo]) * taps[u];
          }
          dp[static_cast<int64_t>(i) * W + j] += static_cast<T>(acc);
        }
    }
  });
}

}  // namespace lgc::nn
