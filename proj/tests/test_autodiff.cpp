#include <cmath>

#include "doctest.h"
#include "lgc/autodiff.hpp"
#include "lgc/layers.hpp"
#include "lgc/optim.hpp"
#include "test_util.hpp"

using namespace lgc;
using namespace lgc::nn;
using lgc::testutil::fd_check;
using lgc::testutil::rand_leaf;
using lgc::testutil::rand_leaf_away_from;

TEST_CASE("rng determinism and child streams") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; i++) {
    double va = a.uniform();
    CHECK(va == b.uniform());
    CHECK(va >= 0.0);
    CHECK(va < 1.0);
  }
  CHECK(a.uniform() != c.uniform());
  Rng p(7);
  Rng c1 = p.child(1), c1b = p.child(1), c2 = p.child(2);
  CHECK(c1.uniform() == c1b.uniform());
  CHECK(c1.uniform() != c2.uniform());
  // bounded draws stay in range
  Rng d(5);
  for (int i = 0; i < 1000; i++) CHECK(d.below(17) < 17);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(1);
  auto x = rand_leaf({2, 3}, rng);
  auto y = rand_leaf({2, 3}, rng);
  fd_check([&] { return sum_all(add(x, y)); }, {x, y});
  fd_check([&] { return sum_all(sub(x, y)); }, {x, y});
  fd_check([&] { return sum_all(mul(x, y)); }, {x, y});
  auto ypos = rand_leaf({2, 3}, rng, 0.5, 2.0);
  fd_check([&] { return sum_all(div(x, ypos)); }, {x, ypos});
  fd_check([&] { return sum_all(add_scalar(x, 1.5)); }, {x});
  fd_check([&] { return sum_all(mul_scalar(x, -2.5)); }, {x});
  fd_check([&] { return sum_all(neg(x)); }, {x});
  auto xk = rand_leaf_away_from({2, 3}, rng);
  fd_check([&] { return sum_all(abs_(xk)); }, {xk});
  fd_check([&] { return sum_all(square(x)); }, {x});
  auto xpos = rand_leaf({2, 3}, rng, 0.5, 2.0);
  fd_check([&] { return sum_all(sqrt_(xpos)); }, {xpos});
  fd_check([&] { return sum_all(log_(xpos)); }, {xpos});
  fd_check([&] { return sum_all(exp_(x)); }, {x});
  fd_check([&] { return sum_all(sigmoid(x)); }, {x});
  fd_check([&] { return sum_all(tanh_(x)); }, {x});
  fd_check([&] { return sum_all(relu(xk)); }, {xk});
  fd_check([&] { return sum_all(leaky_relu(xk, 0.2)); }, {xk});
  fd_check([&] { return sum_all(softplus(x)); }, {x});
  fd_check([&] { return mean_all(mul(x, x)); }, {x});
}

TEST_CASE("shape op gradients") {
  Rng rng(2);
  auto x = rand_leaf({2, 3, 2, 2}, rng);
  auto y = rand_leaf({2, 2, 2, 2}, rng);
  fd_check([&] { return sum_all(square(reshape(x, {4, 6}))); }, {x});
  fd_check([&] { return sum_all(square(concat_channels(x, y))); }, {x, y});
  auto a2 = rand_leaf({3, 4}, rng);
  auto b2 = rand_leaf({3, 2}, rng);
  fd_check([&] { return sum_all(square(concat_channels(a2, b2))); }, {a2, b2});
  fd_check([&] { return sum_all(square(slice_channels(x, 1, 3))); }, {x});
  fd_check([&] { return sum_all(square(slice_channels(a2, 0, 2))); }, {a2});
}

TEST_CASE("linear forward oracle and gradients") {
  // 1x2 * (2x2 weight)^T + b, hand computed
  auto x = leaf(Tensor<double>({1, 2}, {1.0, 2.0}), true);
  auto w = leaf(Tensor<double>({2, 2}, {3.0, 4.0, 5.0, 6.0}), true);
  auto b = leaf(Tensor<double>({2}, {0.5, -0.5}), true);
  auto out = linear(x, w, b);
  CHECK(out->value[0] == doctest::Approx(1 * 3 + 2 * 4 + 0.5));
  CHECK(out->value[1] == doctest::Approx(1 * 5 + 2 * 6 - 0.5));
  Rng rng(3);
  auto xr = rand_leaf({4, 5}, rng);
  auto wr = rand_leaf({3, 5}, rng);
  auto br = rand_leaf({3}, rng);
  fd_check([&] { return sum_all(square(linear(xr, wr, br))); }, {xr, wr, br});
  fd_check([&] { return sum_all(square(linear(xr, wr, Var<double>{}))); }, {xr, wr});
}

TEST_CASE("adain and instance norm gradients") {
  Rng rng(4);
  auto x = rand_leaf({2, 3, 4, 4}, rng);
  auto g = rand_leaf({2, 3}, rng, 0.5, 1.5);
  auto b = rand_leaf({2, 3}, rng);
  fd_check([&] { return sum_all(square(adain(x, g, b, 1e-5))); }, {x, g, b}, 1e-5, 2e-3);
  fd_check([&] { return sum_all(square(instance_norm(x, 1e-5))); }, {x}, 1e-5, 2e-3);
  // forward property: normalized output has zero mean / unit variance per (n,c)
  auto yn = instance_norm(x, 1e-9);
  for (int n = 0; n < 2; n++)
    for (int c = 0; c < 3; c++) {
      double m = 0, v = 0;
      for (int h = 0; h < 4; h++)
        for (int w = 0; w < 4; w++) m += yn->value.at(n, c, h, w);
      m /= 16;
      for (int h = 0; h < 4; h++)
        for (int w = 0; w < 4; w++) {
          double d = yn->value.at(n, c, h, w) - m;
          v += d * d;
        }
      v /= 16;
      CHECK(std::abs(m) < 1e-9);
      CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("adain fused activation epilogue matches the separate op") {
  Rng rng(7);
  auto x = rand_leaf({2, 3, 4, 4}, rng);
  auto g = rand_leaf({2, 3}, rng, 0.5, 1.5);
  auto b = rand_leaf({2, 3}, rng);
  struct Case {
    Act act;
    double slope;
  };
  for (const auto& [act, slope] : {Case{Act::relu, 0.0}, Case{Act::leaky, 0.2}}) {
    CAPTURE(static_cast<int>(act));
    auto fused = adain(x, g, b, 1e-5, act, slope);
    auto plain = adain(x, g, b, 1e-5);
    auto ref = act == Act::relu ? relu(plain) : leaky_relu(plain, slope);
    bool straddles = false;
    for (int64_t i = 0; i < ref->value.numel(); i++) {
      CHECK(fused->value[i] == ref->value[i]);  // forward is bit-identical
      if (plain->value[i] < 0.0) straddles = true;
    }
    CHECK(straddles);

    // backward folds the mask into the channel reductions; accumulation
    // order differs from the two-op form, so compare to rounding tolerance.
    backward(sum_all(square(fused)));
    const Tensor<double> gx = x->grad, gg = g->grad, gb = b->grad;
    backward(sum_all(square(ref)));
    for (int64_t i = 0; i < gx.numel(); i++)
      CHECK(gx[i] == doctest::Approx(x->grad[i]).epsilon(1e-12));
    for (int64_t i = 0; i < gg.numel(); i++)
      CHECK(gg[i] == doctest::Approx(g->grad[i]).epsilon(1e-12));
    for (int64_t i = 0; i < gb.numel(); i++)
      CHECK(gb[i] == doctest::Approx(b->grad[i]).epsilon(1e-12));
  }
  fd_check([&] { return sum_all(square(adain(x, g, b, 1e-5, Act::relu))); }, {x, g, b}, 1e-5,
           2e-3);
  fd_check([&] { return sum_all(square(instance_norm(x, 1e-5, Act::leaky, 0.2))); }, {x}, 1e-5,
           2e-3);
}

TEST_CASE("fused loss gradients") {
  Rng rng(5);
  auto logits = rand_leaf({3, 4}, rng);
  Tensor<double> targets({3, 4});
  for (int64_t i = 0; i < targets.numel(); i++) targets[i] = (i % 3 == 0) ? 1.0 : 0.0;
  fd_check([&] { return bce_with_logits(logits, targets); }, {logits});

  auto seg = rand_leaf({2, 5, 3, 3}, rng);
  Tensor<int32_t> labels({2, 3, 3});
  Rng lr(6);
  for (int64_t i = 0; i < labels.numel(); i++)
    labels[i] = static_cast<int32_t>(lr.below(5));
  fd_check([&] { return softmax_cross_entropy(seg, labels); }, {seg});
}

TEST_CASE("softmax cross entropy value oracle") {
  // single pixel, two classes, logits (0, log 3): p = (0.25, 0.75)
  auto logits = leaf(Tensor<double>({1, 2, 1, 1}, {0.0, std::log(3.0)}), true);
  Tensor<int32_t> labels({1, 1, 1});
  labels[0] = 1;
  CHECK(value_of(softmax_cross_entropy(logits, labels)) ==
        doctest::Approx(-std::log(0.75)).epsilon(1e-12));
  labels[0] = 0;
  CHECK(value_of(softmax_cross_entropy(logits, labels)) ==
        doctest::Approx(-std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("backward barriers cut gradient flow") {
  auto x = leaf(Tensor<double>({2}, {1.0, 2.0}), true);
  auto y = mul_scalar(x, 2.0);
  auto z = mul_scalar(y, 3.0);
  auto loss = sum_all(z);
  backward(loss, {y});
  CHECK(!y->has_fresh_grad());  // barrier is a constant for the sweep
  CHECK(!x->has_fresh_grad());  // and nothing flows past it
  // The same graph still supports a later unbarred sweep.
  backward(loss);
  CHECK(x->grad[0] == doctest::Approx(6.0));
}

TEST_CASE("barrier prunes one branch while the other still gets gradients") {
  // Mirrors the shared-forward discriminator update: score depends on a
  // weight (wants grads) and on a generator output (barred).
  auto w = leaf(Tensor<double>({2}, {3.0, 4.0}), true);
  auto g_in = leaf(Tensor<double>({2}, {1.0, 1.0}), true);
  auto fake = mul_scalar(g_in, 2.0);  // "generator output"
  auto score = sum_all(mul(fake, w));
  backward(score, {fake});
  CHECK(w->has_fresh_grad());
  CHECK(w->grad[0] == doctest::Approx(2.0));  // d(score)/dw = fake value
  CHECK(w->grad[1] == doctest::Approx(2.0));
  CHECK(!fake->has_fresh_grad());
  CHECK(!g_in->has_fresh_grad());
}

TEST_CASE("gradients are fresh per backward pass, not accumulated across") {
  auto x = leaf(Tensor<double>({1}, {2.0}), true);
  auto l1 = sum_all(square(x));
  backward(l1);
  CHECK(x->grad[0] == doctest::Approx(4.0));
  auto l2 = sum_all(square(x));
  backward(l2);
  CHECK(x->grad[0] == doctest::Approx(4.0));  // not 8.0
}

TEST_CASE("two losses in one graph accumulate within a pass") {
  auto x = leaf(Tensor<double>({1}, {3.0}), true);
  auto l = add(sum_all(square(x)), sum_all(mul_scalar(x, 5.0)));
  backward(l);
  CHECK(x->grad[0] == doctest::Approx(6.0 + 5.0));
}

TEST_CASE("no-grad graphs are dropped") {
  auto x = leaf(Tensor<double>({2}, {1.0, 2.0}), false);
  auto y = square(x);
  CHECK(!y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("freeze guard suppresses weight gradients at backward time") {
  Rng rng(7);
  auto x = rand_leaf({2, 3}, rng);
  auto w = rand_leaf({4, 3}, rng);
  auto y = linear(x, w, Var<double>{});
  auto loss = sum_all(square(y));
  {
    FreezeGuard<double> guard({w});
    backward(loss);
  }
  CHECK(x->has_fresh_grad());
  CHECK(!w->has_fresh_grad());
  CHECK(w->requires_grad);  // restored on scope exit
  // without the guard the same graph does reach w
  auto loss2 = sum_all(square(linear(x, w, Var<double>{})));
  backward(loss2);
  CHECK(w->has_fresh_grad());
}

TEST_CASE("quantize") {
  Rng rng(8);
  Tensor<double> v({5}, {-1.7, -0.5, 0.2, 0.5, 2.5});
  auto z = leaf(v, true);
  auto qe = quantize(z, QuantizeMode::eval);
  CHECK(qe->value[0] == -2.0);  // round half away from zero
  CHECK(qe->value[1] == -1.0);
  CHECK(qe->value[2] == 0.0);
  CHECK(qe->value[3] == 1.0);
  CHECK(qe->value[4] == 3.0);
  CHECK(!qe->requires_grad);

  auto qt = quantize(z, QuantizeMode::train, &rng);
  CHECK(qt->requires_grad);
  for (int64_t i = 0; i < qt->value.numel(); i++) {
    double d = qt->value[i] - z->value[i];
    CHECK(d >= -0.5);
    CHECK(d < 0.5);
  }
  backward(sum_all(qt));
  CHECK(z->grad[0] == doctest::Approx(1.0));  // straight-through
}

TEST_CASE("sgd and adam single steps match frozen oracles") {
  auto w = leaf(Tensor<double>({1}, {1.0}), true);
  Sgd<double> sgd(0.1);
  for (int i = 0; i < 3; i++) {
    backward(mul_scalar(w, 0.5));
    sgd.step({w});
  }
  CHECK(w->value[0] == doctest::Approx(0.85).epsilon(1e-12));

  auto w2 = leaf(Tensor<double>({1}, {1.0}), true);
  Adam<double> adam(0.01);
  backward(mul_scalar(w2, 0.5));
  adam.step({w2});
  CHECK(w2->value[0] == doctest::Approx(0.9900000002).epsilon(1e-10));
  backward(mul_scalar(w2, 0.5));
  adam.step({w2});
  CHECK(w2->value[0] == doctest::Approx(0.9800000004).epsilon(1e-10));
}

TEST_CASE("optimizers skip parameters with stale gradients") {
  auto used = leaf(Tensor<double>({1}, {1.0}), true);
  auto unused = leaf(Tensor<double>({1}, {1.0}), true);
  Sgd<double> sgd(0.1);
  backward(mul_scalar(used, 1.0));
  sgd.step({used, unused});
  CHECK(used->value[0] == doctest::Approx(0.9));
  CHECK(unused->value[0] == doctest::Approx(1.0));
}

TEST_CASE("param store groups, lookup and hashing") {
  ParamStore<double> ps;
  Rng rng(9);
  auto a = ps.add("enc.w1", Tensor<double>({2, 2}, {1, 2, 3, 4}));
  ps.add("enc.b1", Tensor<double>({2}));
  ps.add("dec.w1", Tensor<double>({2}));
  CHECK(ps.groups() == std::vector<std::string>({"enc", "dec"}));
  CHECK(ps.group_params({"enc"}).size() == 2);
  CHECK(ps.all_params().size() == 3);
  CHECK(ps.find("enc.w1") == a);
  CHECK_THROWS_AS((void)ps.find("nope"), ContractError);
  CHECK_THROWS_AS(ps.add("enc.w1", Tensor<double>({1})), Error);
  uint64_t h1 = ps.group_hash("enc");
  a->value[0] = 99.0;
  CHECK(ps.group_hash("enc") != h1);
  CHECK(ps.group_hash("dec") != ps.group_hash("enc"));
  (void)rng;
}

TEST_CASE("kaiming uniform bounds and spread") {
  Rng rng(10);
  auto t = kaiming_uniform<double>({64, 27}, 27, 0.0, rng);
  double bound = std::sqrt(2.0) * std::sqrt(3.0 / 27.0);
  double mx = 0.0;
  for (int64_t i = 0; i < t.numel(); i++) {
    CHECK(std::abs(t[i]) <= bound);
    mx = std::max(mx, std::abs(t[i]));
  }
  CHECK(mx > 0.8 * bound);  // actually fills the range
}
