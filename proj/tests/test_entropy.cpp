#include <cmath>

#include "doctest.h"
#include "lgc/entropy/cdf.hpp"
#include "lgc/entropy/factorized.hpp"
#include "lgc/entropy/gaussian.hpp"
#include "lgc/entropy/rate.hpp"
#include "lgc/optim.hpp"
#include "test_util.hpp"

using namespace lgc;
using namespace lgc::entropy;
using lgc::nn::leaf;
using lgc::nn::TensorD;
using lgc::nn::Var;
using lgc::testutil::fd_check;
using lgc::testutil::rand_leaf;

TEST_CASE("gaussian interval mass matches high-precision oracles") {
  struct Case {
    double x, mu, sigma, expect;
  };
  // reference values computed with 40-digit arithmetic
  const Case cases[] = {
      {0, 0, 1, 0.38292492254802620728},
      {2, 0.7, 0.5, 0.054640183109400460081},
      {-3, 1.2, 2.0, 0.022770069260775133645},
      {0, 0, 1e-4, 1.0},
      {1, -0.3, 6.0, 0.064876305565338635377},
  };
  for (const Case& c : cases) {
    double m = gaussian_interval_mass(c.x, c.mu, c.sigma, false);
    CHECK(std::abs(m - c.expect) <= 1e-12 * std::max(1.0, std::abs(c.expect)));
  }
  // deep tail: clamped to the probability floor, unclamped stays tiny
  CHECK(gaussian_interval_mass(10.0, 0.0, 1.0, false) ==
        doctest::Approx(1.049408317473082657e-21).epsilon(1e-9));
  CHECK(gaussian_interval_mass(10.0, 0.0, 1.0, true) == kProbFloor);
}

TEST_CASE("gaussian masses over a window telescope to the window mass") {
  struct Case {
    double mu, sigma, window;
  };
  // window = Phi((30.5-mu)/sigma) - Phi((-30.5-mu)/sigma), 40-digit oracle
  const Case cases[] = {
      {0, 0.1, 1.0},
      {5, 10, 0.99442123847029767876},
      {-5, 10, 0.99442123847029767876},
      {0, 6, 0.99999962913198943851},
      {5, 6, 0.99998930983156730567},
      {0, 10, 0.99771158633795460213},
      {2.5, 3.7, 0.99999999999998098589},
  };
  for (const Case& c : cases) {
    double sum = 0.0;
    for (int x = -30; x <= 30; x++)
      sum += gaussian_interval_mass(static_cast<double>(x), c.mu, c.sigma, false);
    CHECK(std::abs(sum - c.window) <= 1e-12);
  }
  // normalization inside the operating band: sigma in [0.1, 6], mu in [-5, 5]
  for (double sigma : {0.1, 0.5, 1.0, 2.5, 6.0})
    for (double mu : {-5.0, -1.3, 0.0, 2.7, 5.0}) {
      double sum = 0.0;
      for (int x = -30; x <= 30; x++)
        sum += gaussian_interval_mass(static_cast<double>(x), mu, sigma, false);
      CHECK(sum <= 1.0 + 1e-12);
      CHECK(sum >= 1.0 - 1e-4);
    }
}

TEST_CASE("gaussian likelihood gradients") {
  Rng rng(21);
  auto x = rand_leaf({3, 2}, rng, -2.0, 2.0);
  auto mu = rand_leaf({3, 2}, rng, -1.0, 1.0);
  auto sigma = rand_leaf({3, 2}, rng, 0.5, 2.0);
  fd_check([&] {
    return nn::mean_all(bits_node(gaussian_likelihood(x, mu, sigma)));
  }, {x, mu, sigma});
}

TEST_CASE("clamped gaussian likelihood entries propagate zero gradient") {
  auto x = leaf(TensorD({2}, {10.0, 0.3}), true);
  auto mu = leaf(TensorD({2}, {0.0, 0.0}), true);
  auto sigma = leaf(TensorD({2}, {1.0, 1.0}), true);
  auto p = gaussian_likelihood(x, mu, sigma);
  CHECK(p->value[0] == kProbFloor);
  nn::backward(nn::sum_all(p));
  CHECK(x->grad[0] == 0.0);
  CHECK(x->grad[1] != 0.0);
  CHECK(mu->grad[0] == 0.0);
  CHECK(sigma->grad[0] == 0.0);
}

TEST_CASE("gaussian likelihood rejects non-positive sigma") {
  auto x = leaf(TensorD({1}, {0.0}));
  auto mu = leaf(TensorD({1}, {0.0}));
  auto sigma = leaf(TensorD({1}, {0.0}));
  CHECK_THROWS_AS((void)gaussian_likelihood(x, mu, sigma), ContractError);
}

namespace {

// Pins every parameter of channel `ch` to the constants used by the
// 40-digit reference computation.
void pin_params(nn::ParamStore<double>& ps, const std::string& prefix, int ch) {
  const double braw[4][3] = {{0.1, -0.2, 0.3}, {0.05, 0.1, -0.1}, {-0.3, 0.2, 0.0}, {0.15, 0, 0}};
  const double araw[3][3] = {{0.3, -0.4, 0.5}, {-0.2, 0.1, 0.0}, {0.25, -0.15, 0.35}};
  for (int k = 0; k < 4; k++) {
    auto H = ps.find(prefix + ".h" + std::to_string(k));
    const int rout = FactorizedModel<double>::kOut[static_cast<size_t>(k)];
    const int rin = FactorizedModel<double>::kIn[static_cast<size_t>(k)];
    for (int r = 0; r < rout; r++)
      for (int d = 0; d < rin; d++)
        H->value[(static_cast<int64_t>(ch) * rout + r) * rin + d] = 0.2;
    auto b = ps.find(prefix + ".b" + std::to_string(k));
    for (int r = 0; r < rout; r++)
      b->value[static_cast<int64_t>(ch) * rout + r] = braw[k][r];
    if (k < 3) {
      auto a = ps.find(prefix + ".a" + std::to_string(k));
      for (int r = 0; r < rout; r++)
        a->value[static_cast<int64_t>(ch) * rout + r] = araw[k][r];
    }
  }
}

}  // namespace

TEST_CASE("factorized cdf matches the high-precision oracle") {
  nn::ParamStore<double> ps;
  Rng rng(22);
  FactorizedModel<double> model(ps, "prior", 2, rng);
  pin_params(ps, "prior", 1);
  CHECK(std::abs(model.cdf(1, 1.3) - 0.99999996678979842512) <= 1e-12);
  CHECK(std::abs(model.cdf(1, -0.7) - 0.0011449444470870704701) <= 1e-14);
  CHECK(std::abs(model.cdf(1, 0.5) - 0.9997485908594905419) <= 1e-12);
  CHECK(std::abs(model.cdf(1, -0.5) - 0.013726922982439830716) <= 1e-13);
  auto pmf = model.pmf(1, 0, 0);
  CHECK(std::abs(pmf[0] - 0.98602166787705071118) <= 1e-12);
}

TEST_CASE("factorized cdf is a valid distribution function") {
  nn::ParamStore<double> ps;
  Rng rng(23);
  FactorizedModel<double> model(ps, "prior", 3, rng);
  for (int c = 0; c < 3; c++) {
    double prev = -1.0;
    for (double v = -80.0; v <= 80.0; v += 0.25) {
      double cv = model.cdf(c, v);
      CHECK(cv >= 0.0);
      CHECK(cv <= 1.0);
      CHECK(cv >= prev);  // monotone
      prev = cv;
    }
    CHECK(model.cdf(c, -1e4) < 1e-6);
    CHECK(model.cdf(c, 1e4) > 1.0 - 1e-6);
    // pmf telescopes to the cdf difference
    auto pmf = model.pmf(c, -20, 20);
    double sum = 0.0;
    for (double p : pmf) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - (model.cdf(c, 20.5) - model.cdf(c, -20.5))) <= 1e-12);
  }
}

TEST_CASE("fresh factorized model spreads mass widely") {
  for (uint64_t seed : {1ull, 9ull, 77ull}) {
    nn::ParamStore<double> ps;
    Rng rng(seed);
    FactorizedModel<double> model(ps, "prior", 4, rng);
    for (int c = 0; c < 4; c++) {
      auto p0 = model.pmf(c, 0, 0)[0];
      CHECK(p0 >= 0.012);
      CHECK(p0 <= 0.030);
    }
  }
}

TEST_CASE("factorized likelihood forward matches pmf and clamps the tail") {
  nn::ParamStore<double> ps;
  Rng rng(24);
  FactorizedModel<double> model(ps, "prior", 2, rng);
  TensorD xv({3, 2});
  const double vals[6] = {0, -1, 2, 1, -2, 0};
  for (int i = 0; i < 6; i++) xv[i] = vals[i];
  auto p = model.likelihood(leaf(xv));
  for (int n = 0; n < 3; n++)
    for (int c = 0; c < 2; c++) {
      double expect = model.pmf(c, static_cast<int>(xv.at(n, c)),
                                static_cast<int>(xv.at(n, c)))[0];
      CHECK(p->value.at(n, c) == doctest::Approx(expect).epsilon(1e-12));
    }
  // far tail clamps to the floor
  TensorD far({1, 2}, {4000.0, -4000.0});
  auto pf = model.likelihood(leaf(far));
  CHECK(pf->value[0] == kProbFloor);
  CHECK(pf->value[1] == kProbFloor);
}

TEST_CASE("factorized likelihood gradients") {
  nn::ParamStore<double> ps;
  Rng rng(25);
  FactorizedModel<double> model(ps, "prior", 2, rng);
  auto x = rand_leaf({3, 2}, rng, -2.0, 2.0);
  std::vector<Var<double>> leaves = ps.all_params();
  leaves.push_back(x);
  fd_check([&] { return nn::mean_all(bits_node(model.likelihood(x))); }, leaves,
           1e-5, 2e-3);
  // 4-d activations route channels correctly
  auto x4 = rand_leaf({2, 2, 2, 2}, rng, -2.0, 2.0);
  fd_check([&] { return nn::mean_all(bits_node(model.likelihood(x4))); }, {x4});
}

TEST_CASE("factorized model fits a discretized gaussian by gradient descent") {
  nn::ParamStore<double> ps;
  Rng rng(26);
  FactorizedModel<double> model(ps, "prior", 1, rng);
  nn::Adam<double> opt(0.02);
  Rng data = rng.child(1);
  double bits = 0.0;
  for (int step = 0; step < 400; step++) {
    TensorD batch({256, 1});
    for (int64_t i = 0; i < batch.numel(); i++)
      batch[i] = std::round(data.normal());
    auto x = leaf(std::move(batch));
    auto loss = nn::mul_scalar(bits_node(model.likelihood(x)), 1.0 / 256);
    bits = nn::value_of(loss);
    nn::backward(loss);
    opt.step(ps.all_params());
  }
  // true distribution: integers under a unit gaussian; p(0) = 0.3829,
  // p(+-1) = 0.2417, entropy about 2.10 bits
  CHECK(bits <= 2.2);
  double p0 = model.pmf(0, 0, 0)[0];
  CHECK(p0 >= 0.33);
  CHECK(p0 <= 0.44);
  double p1 = model.pmf(0, 1, 1)[0], pm1 = model.pmf(0, -1, -1)[0];
  CHECK(p1 + pm1 >= 0.40);
  CHECK(p1 + pm1 <= 0.56);
}

TEST_CASE("quantized cdf tables: exact quantization and lookup") {
  QuantizedCdfTable t = build_cdf_table({0.5, 0.25, 0.125, 0.125}, -1);
  CHECK(t.lo() == -1);
  CHECK(t.hi() == 2);
  CHECK(t.size() == 4);
  CHECK(t.freq(-1) == 32768);
  CHECK(t.freq(0) == 16384);
  CHECK(t.freq(1) == 8192);
  CHECK(t.freq(2) == 8192);
  CHECK(t.cum_freq(-1) == 0);
  CHECK(t.cum_freq(2) == 57344);
  CHECK(t.find(0) == -1);
  CHECK(t.find(32767) == -1);
  CHECK(t.find(32768) == 0);
  CHECK(t.find(65535) == 2);
  CHECK_THROWS_AS((void)t.freq(3), ContractError);
}

TEST_CASE("quantized cdf tables: zero-width repair and invariants") {
  QuantizedCdfTable t = build_cdf_table({1e-12, 1.0}, 0);
  CHECK(t.freq(0) == 1);
  CHECK(t.freq(1) == kProbScale - 1);

  Rng rng(27);
  for (int trial = 0; trial < 30; trial++) {
    int n = 1 + static_cast<int>(rng.below(300));
    std::vector<double> pmf(static_cast<size_t>(n));
    for (auto& p : pmf) {
      p = rng.uniform();
      if (rng.below(4) == 0) p *= 1e-9;  // force repairs
    }
    pmf[rng.below(static_cast<uint64_t>(n))] += 1.0;  // ensure positive mass
    QuantizedCdfTable qt = build_cdf_table(pmf, -5);
    uint32_t total = 0;
    for (int s = qt.lo(); s <= qt.hi(); s++) {
      CHECK(qt.freq(s) >= 1);
      total += qt.freq(s);
    }
    CHECK(total == kProbScale);
  }
}

TEST_CASE("quantized cdf tables: input validation") {
  CHECK_THROWS_AS((void)build_cdf_table({}, 0), ContractError);
  CHECK_THROWS_AS((void)build_cdf_table({0.0, 0.0}, 0), ContractError);
  CHECK_THROWS_AS((void)build_cdf_table({0.5, -0.1}, 0), ContractError);
  std::vector<double> wide(40000, 1.0);
  CHECK_THROWS_AS((void)build_cdf_table(wide, 0), RangeError);
}

TEST_CASE("rate helpers") {
  TensorD p({3}, {0.5, 0.25, 0.125});
  CHECK(ideal_bits(p) == doctest::Approx(1 + 2 + 3).epsilon(1e-12));
  auto v = leaf(p, true);
  auto bits = bits_node(v);
  CHECK(nn::value_of(bits) == doctest::Approx(6.0).epsilon(1e-10));
  fd_check([&] { return bits_node(v); }, {v});
}
