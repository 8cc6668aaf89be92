// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "wmoe/losses.hpp"
#include "wmoe/rng.hpp"

using namespace wmoe;

TEST_SUITE("losses") {

TEST_CASE("bce hand values") {
  // near-perfect prediction
  CHECK(bce(1.0, Tensor::scalar(1.0 - 1e-7)).value() == doctest::Approx(1e-7).epsilon(1e-3));
  // coin-flip prediction on a negative
  CHECK(bce(0.0, Tensor::scalar(0.5)).value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // the clamp keeps the loss finite at p -> 0 with a positive label
  CHECK(bce(1.0, Tensor::scalar(0.0)).value() ==
        doctest::Approx(-std::log(1e-7)).epsilon(1e-12));
  CHECK_THROWS_AS(bce(0.5, Tensor::scalar(0.5)), contract_error);
}

TEST_CASE("focal reduces to scaled bce at gamma=0, alpha=0.5") {
  Rng rng(1);
  std::vector<double> map(16), gt(16);
  for (auto& v : map) v = rng.uniform(0.05, 0.95);
  for (auto& v : gt) v = rng.uniform01() < 0.5 ? 1.0 : 0.0;
  Tensor m = Tensor::from(map, {4, 4});
  Tensor g = Tensor::from(gt, {4, 4});
  const double f = focal(m, g, 0.0, 0.5).value();
  double expected = 0.0;
  for (int i = 0; i < 16; ++i) {
    const double p_t = gt[i] == 1.0 ? map[i] : 1.0 - map[i];
    expected += 0.5 * -std::log(p_t);
  }
  expected /= 16.0;
  CHECK(f == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("focal: perfect map goes to zero; single-pixel hand value") {
  Tensor perfect = Tensor::from({1.0 - 1e-9, 1e-9}, {1, 2});
  Tensor gt = Tensor::from({1.0, 0.0}, {1, 2});
  CHECK(focal(perfect, gt, 2.0, 0.25).value() <= 1e-15);

  // single pixel, gt=1, p=0.5, gamma=2, alpha=0.25: 0.25 * 0.25 * ln 2
  Tensor half = Tensor::from({0.5}, {1, 1});
  Tensor one = Tensor::from({1.0}, {1, 1});
  CHECK(focal(half, one, 2.0, 0.25).value() ==
        doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("dice hand values") {
  // perfect overlap deviates by at most smooth/(2*sum+smooth)
  Tensor m = Tensor::from({1, 0, 1, 0}, {2, 2});
  const double v = dice(m, m, 1.0).value();
  CHECK(v >= 0.0);
  CHECK(v <= 1.0 / (2.0 * 2 + 1.0));

  // empty-empty is exactly zero
  Tensor zero = Tensor::zeros({2, 2});
  CHECK(dice(zero, zero, 1.0).value() == 0.0);

  // disjoint singletons: 1 - 1/3 = 2/3
  Tensor a = Tensor::from({1, 0}, {1, 2});
  Tensor b = Tensor::from({0, 1}, {1, 2});
  CHECK(dice(a, b, 1.0).value() == doctest::Approx(2.0 / 3).epsilon(1e-12));
}

TEST_CASE("loss components are nonnegative on random inputs") {
  Rng rng(2);
  for (int t = 0; t < 25; ++t) {
    std::vector<double> mv(9), gv(9);
    for (auto& v : mv) v = rng.uniform(0.01, 0.99);
    for (auto& v : gv) v = rng.uniform01() < 0.4 ? 1.0 : 0.0;
    Tensor m = Tensor::from(mv, {3, 3});
    Tensor g = Tensor::from(gv, {3, 3});
    CHECK(focal(m, g, 2.0, 0.25).value() >= 0.0);
    CHECK(dice(m, g, 1.0).value() >= 0.0);
    CHECK(bce(t % 2, Tensor::scalar(rng.uniform(0.01, 0.99))).value() >= 0.0);
  }
}

TEST_CASE("focal and dice are differentiable") {
  NamedParamSet params;
  Rng rng(3);
  std::vector<double> mv(9);
  for (auto& v : mv) v = rng.uniform(0.2, 0.8);
  params.insert("map", Tensor::from(mv, {3, 3}, true));
  Tensor gt = Tensor::from({1, 0, 0, 0, 1, 0, 0, 0, 1}, {3, 3});
  auto f = [&](NamedParamSet& p) {
    return add(focal(p.at("map"), gt, 2.0, 0.25), dice(p.at("map"), gt, 1.0));
  };
  CHECK(grad_check(f, params, 1e-5, 9, 4) <= 1e-6);
}

TEST_CASE("downsample_mask_any: any positive pixel marks the cell") {
  std::vector<double> mask(8 * 8, 0.0);
  mask[0 * 8 + 0] = 1.0;  // block (0,0)
  mask[5 * 8 + 6] = 1.0;  // block (1,1) for a 2x2 grid of 4x4 blocks
  const auto down = downsample_mask_any(mask, 8, 8, 2, 2);
  CHECK(down == std::vector<double>{1, 0, 0, 1});

  CHECK_THROWS_AS(downsample_mask_any(mask, 8, 8, 3, 2), dim_error);
}

TEST_CASE("mask entries outside {0,1} are rejected") {
  Tensor m = Tensor::from({0.5}, {1, 1});
  Tensor bad = Tensor::from({0.5}, {1, 1});
  CHECK_THROWS_AS(focal(m, bad, 2.0, 0.25), contract_error);
}

}  // TEST_SUITE
