// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "wmoe/metrics.hpp"
#include "wmoe/rng.hpp"

#include "oracles.hpp"

using namespace wmoe;

TEST_SUITE("metrics") {

TEST_CASE("auroc basics") {
  // perfect ranking
  CHECK(*metrics::auroc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  // pure ties
  CHECK(*metrics::auroc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);
  // single class is absent, not zero
  CHECK_FALSE(metrics::auroc({0.1, 0.2}, {1, 1}).has_value());
}

TEST_CASE("average precision basics") {
  // single positive ranked first
  CHECK(*metrics::average_precision({0.9, 0.5, 0.1}, {1, 0, 0}) == 1.0);
  // single positive ranked second of two
  CHECK(*metrics::average_precision({0.9, 0.5}, {0, 1}) == 0.5);
  CHECK_FALSE(metrics::average_precision({0.9, 0.5}, {0, 0}).has_value());
}

TEST_CASE("f1_max basics") {
  CHECK(*metrics::f1_max({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  // all predicted positive on a balanced set is a lower bound of 2/3
  const double f1 = *metrics::f1_max({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0});
  CHECK(f1 >= doctest::Approx(2.0 / 3));
  CHECK_FALSE(metrics::f1_max({0.9}, {0}).has_value());
}

TEST_CASE("ranking metrics match brute-force oracles on 200 random instances") {
  Rng rng(404);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(36));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
      // quantized scores force plenty of ties
      scores[i] = std::floor(rng.uniform01() * 8) / 8.0;
      labels[i] = rng.uniform01() < 0.4 ? 1 : 0;
      (labels[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    CHECK(std::abs(*metrics::auroc(scores, labels) - oracles::auroc_pairs(scores, labels)) <=
          1e-9);
    CHECK(std::abs(*metrics::average_precision(scores, labels) -
                   oracles::ap_threshold_enum(scores, labels)) <= 1e-9);
    CHECK(std::abs(*metrics::f1_max(scores, labels) -
                   oracles::f1_max_threshold_enum(scores, labels)) <= 1e-9);
  }
}

TEST_CASE("metrics are invariant under strictly increasing transforms") {
  Rng rng(405);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(30));
    std::vector<double> scores(n), cubed(n);
    std::vector<int> labels(n);
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
      scores[i] = rng.uniform(-2, 2);
      cubed[i] = scores[i] * scores[i] * scores[i] + scores[i];
      labels[i] = rng.uniform01() < 0.5 ? 1 : 0;
      (labels[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    CHECK(*metrics::auroc(scores, labels) == *metrics::auroc(cubed, labels));
    CHECK(*metrics::average_precision(scores, labels) ==
          *metrics::average_precision(cubed, labels));
    CHECK(*metrics::f1_max(scores, labels) == *metrics::f1_max(cubed, labels));
  }
}

TEST_CASE("auroc antisymmetry for tie-free scores") {
  Rng rng(406);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 10;
    std::vector<double> scores(n), negated(n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      scores[i] = rng.uniform01() + i * 1e-6;  // distinct
      negated[i] = -scores[i];
      labels[i] = i % 2;
    }
    CHECK(std::abs(*metrics::auroc(scores, labels) + *metrics::auroc(negated, labels) - 1.0) <=
          1e-12);
  }
}

TEST_CASE("pro: prediction equal to the mask scores 1") {
  metrics::PixelMap mask;
  mask.h = mask.w = 8;
  mask.values.assign(64, 0.0);
  for (int y = 2; y < 5; ++y)
    for (int x = 2; x < 5; ++x) mask.values[y * 8 + x] = 1.0;
  metrics::PixelMap map = mask;
  CHECK(*metrics::pro({map}, {mask}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pro: constant map on a 4x4 single-region case") {
  // A constant prediction has one effective threshold, where every pixel is
  // predicted and each region is fully covered: the step curve scores the
  // region-coverage fraction, here 1.
  metrics::PixelMap mask;
  mask.h = mask.w = 4;
  mask.values.assign(16, 0.0);
  mask.values[5] = 1.0;
  metrics::PixelMap map;
  map.h = map.w = 4;
  map.values.assign(16, 0.7);
  CHECK(*metrics::pro({map}, {mask}, 0.3) == doctest::Approx(1.0).epsilon(1e-12));

  // two thresholds, partial coverage at the sharp one: hand-evaluated curve
  // (flat extension to fpr=0, then trapezoid, clipped at the limit)
  metrics::PixelMap mask2;
  mask2.h = mask2.w = 4;
  mask2.values.assign(16, 0.0);
  mask2.values[5] = mask2.values[6] = 1.0;  // one region of 2 pixels
  metrics::PixelMap map2;
  map2.h = map2.w = 4;
  map2.values.assign(16, 0.1);
  map2.values[5] = 0.9;  // covers half the region at t=0.9, zero FPs
  const double expected = [] {
    // points: (0, 0.5) at t=0.9, (1, 1) at t=0.1
    const double flat = 0.5 * 0.0;
    const double p_lim = 0.5 + (1.0 - 0.5) * (0.3 - 0.0) / (1.0 - 0.0);
    const double trap = (0.3 - 0.0) * 0.5 * (0.5 + p_lim);
    return (flat + trap) / 0.3;
  }();
  CHECK(*metrics::pro({map2}, {mask2}, 0.3) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("pro: absent when no anomalous pixels exist") {
  metrics::PixelMap mask;
  mask.h = mask.w = 4;
  mask.values.assign(16, 0.0);
  metrics::PixelMap map = mask;
  CHECK_FALSE(metrics::pro({map}, {mask}).has_value());
}

TEST_CASE("pro matches the brute-force oracle on 200 random small instances") {
  Rng rng(407);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 4 + static_cast<int>(rng.below(13));
    const int w = 4 + static_cast<int>(rng.below(13));
    metrics::PixelMap map, mask;
    map.h = mask.h = h;
    map.w = mask.w = w;
    map.values.resize(static_cast<std::size_t>(h) * w);
    mask.values.assign(static_cast<std::size_t>(h) * w, 0.0);
    for (auto& v : map.values) v = std::floor(rng.uniform01() * 12) / 12.0;
    // up to 3 rectangular regions
    const int regions = 1 + static_cast<int>(rng.below(3));
    for (int r = 0; r < regions; ++r) {
      const int rh = 1 + static_cast<int>(rng.below(3));
      const int rw = 1 + static_cast<int>(rng.below(3));
      const int y0 = static_cast<int>(rng.below(h - rh + 1));
      const int x0 = static_cast<int>(rng.below(w - rw + 1));
      for (int y = y0; y < y0 + rh; ++y)
        for (int x = x0; x < x0 + rw; ++x) mask.values[y * w + x] = 1.0;
    }
    bool any_neg = false;
    for (double v : mask.values) {
      if (v == 0.0) any_neg = true;
    }
    if (!any_neg) continue;
    const auto impl = metrics::pro({map}, {mask}, 0.3);
    const double oracle = oracles::pro_exhaustive({map}, {mask}, 0.3);
    REQUIRE(impl.has_value());
    CHECK(std::abs(*impl - oracle) <= 1e-9);
  }
}

TEST_CASE("pro handles multiple images with regions split across them") {
  Rng rng(408);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<metrics::PixelMap> maps(2), masks(2);
    for (int im = 0; im < 2; ++im) {
      maps[im].h = masks[im].h = 6;
      maps[im].w = masks[im].w = 6;
      maps[im].values.resize(36);
      masks[im].values.assign(36, 0.0);
      for (auto& v : maps[im].values) v = std::floor(rng.uniform01() * 6) / 6.0;
    }
    masks[0].values[7] = 1.0;
    masks[0].values[8] = 1.0;
    masks[1].values[21] = 1.0;
    const auto impl = metrics::pro(maps, masks, 0.3);
    const double oracle = oracles::pro_exhaustive(maps, masks, 0.3);
    REQUIRE(impl.has_value());
    CHECK(std::abs(*impl - oracle) <= 1e-9);
  }
}

}  // TEST_SUITE
