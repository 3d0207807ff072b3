#include <cmath>

#include "doctest.h"
#include "lgc/conv.hpp"
#include "test_util.hpp"

using namespace lgc;
using namespace lgc::nn;
using lgc::testutil::fd_check;
using lgc::testutil::rand_leaf;

namespace {

// Direct six-loop convolution, independent of the im2col path under test.
TensorD conv_naive(const TensorD& x, const TensorD& w, const TensorD& b,
                   int stride, int pad) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), K = w.dim(2);
  const int Ho = (H + 2 * pad - K) / stride + 1;
  const int Wo = (W + 2 * pad - K) / stride + 1;
  TensorD y({N, Co, Ho, Wo});
  for (int n = 0; n < N; n++)
    for (int co = 0; co < Co; co++)
      for (int oh = 0; oh < Ho; oh++)
        for (int ow = 0; ow < Wo; ow++) {
          double acc = b.numel() ? b[co] : 0.0;
          for (int c = 0; c < C; c++)
            for (int ki = 0; ki < K; ki++)
              for (int kj = 0; kj < K; kj++) {
                int ih = oh * stride - pad + ki;
                int iw = ow * stride - pad + kj;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x.at(n, c, ih, iw) * w.at(co, c, ki, kj);
              }
          y.at(n, co, oh, ow) = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("conv2d forward matches the direct implementation") {
  Rng rng(11);
  struct Case {
    int N, C, H, W, Co, K, stride, pad;
  };
  for (const Case& cs : {Case{2, 3, 8, 6, 4, 3, 1, 1}, Case{1, 2, 8, 8, 5, 4, 2, 1},
                         Case{2, 4, 5, 7, 3, 1, 1, 0}, Case{1, 1, 9, 9, 2, 3, 2, 1},
                         Case{2, 3, 6, 6, 4, 3, 1, 0}}) {
    auto x = rand_leaf({cs.N, cs.C, cs.H, cs.W}, rng);
    auto w = rand_leaf({cs.Co, cs.C, cs.K, cs.K}, rng);
    auto b = rand_leaf({cs.Co}, rng);
    auto y = conv2d(x, w, b, cs.stride, cs.pad);
    TensorD ref = conv_naive(x->value, w->value, b->value, cs.stride, cs.pad);
    REQUIRE(y->value.shape == ref.shape);
    for (int64_t i = 0; i < ref.numel(); i++)
      CHECK(y->value[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }
}

TEST_CASE("conv2d gradients") {
  Rng rng(12);
  auto x = rand_leaf({2, 2, 5, 5}, rng);
  auto w = rand_leaf({3, 2, 3, 3}, rng);
  auto b = rand_leaf({3}, rng);
  fd_check([&] { return sum_all(square(conv2d(x, w, b, 1, 1))); }, {x, w, b});
  auto w4 = rand_leaf({2, 2, 4, 4}, rng);
  auto b4 = rand_leaf({2}, rng);
  fd_check([&] { return sum_all(square(conv2d(x, w4, b4, 2, 1))); }, {x, w4, b4});
}

TEST_CASE("conv2d fused activation epilogue matches the separate op") {
  Rng rng(14);
  auto x = rand_leaf({2, 2, 5, 5}, rng);
  auto w = rand_leaf({3, 2, 3, 3}, rng);
  auto b = rand_leaf({3}, rng);
  struct Case {
    Act act;
    double slope;
  };
  for (const auto& [act, slope] : {Case{Act::leaky, 0.2}, Case{Act::relu, 0.0}}) {
    for (int stride : {1, 2}) {
      CAPTURE(static_cast<int>(act));
      CAPTURE(stride);
      auto fused = conv2d(x, w, b, stride, 1, act, slope);
      auto plain = conv2d(x, w, b, stride, 1);
      auto ref = act == Act::relu ? relu(plain) : leaky_relu(plain, slope);
      REQUIRE(fused->value.shape == ref->value.shape);
      bool straddles = false;  // the mask must actually do something
      for (int64_t i = 0; i < ref->value.numel(); i++) {
        CHECK(fused->value[i] == ref->value[i]);
        if (plain->value[i] < 0.0) straddles = true;
      }
      CHECK(straddles);

      backward(sum_all(square(fused)));
      const Tensor<double> gx = x->grad, gw = w->grad, gb = b->grad;
      backward(sum_all(square(ref)));
      for (int64_t i = 0; i < gx.numel(); i++) CHECK(gx[i] == x->grad[i]);
      for (int64_t i = 0; i < gw.numel(); i++) CHECK(gw[i] == w->grad[i]);
      for (int64_t i = 0; i < gb.numel(); i++) CHECK(gb[i] == b->grad[i]);
    }
  }
  // independent numeric check of the fused backward
  fd_check([&] { return sum_all(square(conv2d(x, w, b, 1, 1, Act::leaky, 0.2))); }, {x, w, b});
}

TEST_CASE("conv2d skips weight gradients for frozen weights") {
  Rng rng(13);
  auto x = rand_leaf({1, 2, 4, 4}, rng);
  auto w = rand_leaf({2, 2, 3, 3}, rng);
  auto b = rand_leaf({2}, rng);
  w->requires_grad = false;
  b->requires_grad = false;
  backward(sum_all(conv2d(x, w, b, 1, 1)));
  CHECK(x->has_fresh_grad());
  CHECK(!w->has_fresh_grad());
  CHECK(!b->has_fresh_grad());
}

TEST_CASE("avgpool2 forward and gradients") {
  auto x = leaf(TensorD({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}), true);
  auto y = avgpool2(x);
  REQUIRE(y->value.shape == std::vector<int>({1, 1, 1, 2}));
  CHECK(y->value[0] == doctest::Approx((1 + 2 + 5 + 6) / 4.0));
  CHECK(y->value[1] == doctest::Approx((3 + 4 + 7 + 8) / 4.0));
  Rng rng(14);
  auto xr = rand_leaf({2, 3, 4, 6}, rng);
  fd_check([&] { return sum_all(square(avgpool2(xr))); }, {xr});
  auto odd = leaf(TensorD({1, 1, 3, 4}), false);
  CHECK_THROWS_AS((void)avgpool2(odd), Error);
}

TEST_CASE("nearest_up forward and gradients") {
  auto x = leaf(TensorD({1, 1, 1, 2}, {1, 2}), true);
  auto y = nearest_up(x, 2);
  REQUIRE(y->value.shape == std::vector<int>({1, 1, 2, 4}));
  CHECK(y->value.at(0, 0, 0, 0) == 1);
  CHECK(y->value.at(0, 0, 0, 1) == 1);
  CHECK(y->value.at(0, 0, 1, 2) == 2);
  CHECK(y->value.at(0, 0, 1, 3) == 2);
  Rng rng(15);
  auto xr = rand_leaf({2, 2, 3, 3}, rng);
  fd_check([&] { return sum_all(square(nearest_up(xr, 2))); }, {xr});
  fd_check([&] { return sum_all(square(nearest_up(xr, 4))); }, {xr});
}

TEST_CASE("global_avg_pool forward and gradients") {
  auto x = leaf(TensorD({1, 2, 1, 2}, {1, 3, 10, 20}), true);
  auto y = global_avg_pool(x);
  REQUIRE(y->value.shape == std::vector<int>({1, 2}));
  CHECK(y->value[0] == doctest::Approx(2.0));
  CHECK(y->value[1] == doctest::Approx(15.0));
  Rng rng(16);
  auto xr = rand_leaf({2, 3, 4, 4}, rng);
  fd_check([&] { return sum_all(square(global_avg_pool(xr))); }, {xr});
}

TEST_CASE("blur_valid forward oracle and gradients") {
  // 1-d style check along rows with taps (0.25, 0.5, 0.25)
  auto x = leaf(TensorD({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}), true);
  std::vector<double> taps{0.25, 0.5, 0.25};
  auto y = blur_valid(x, taps);
  REQUIRE(y->value.shape == std::vector<int>({1, 1, 1, 1}));
  // separable: rows then columns; centre value of the 3x3 block
  double rows[3] = {0.25 * 1 + 0.5 * 2 + 0.25 * 3, 0.25 * 4 + 0.5 * 5 + 0.25 * 6,
                    0.25 * 7 + 0.5 * 8 + 0.25 * 9};
  double expect = 0.25 * rows[0] + 0.5 * rows[1] + 0.25 * rows[2];
  CHECK(y->value[0] == doctest::Approx(expect).epsilon(1e-12));
  Rng rng(17);
  auto xr = rand_leaf({2, 2, 6, 7}, rng);
  fd_check([&] { return sum_all(square(blur_valid(xr, taps))); }, {xr});
}
