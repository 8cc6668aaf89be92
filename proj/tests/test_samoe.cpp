// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "wmoe/rng.hpp"
#include "wmoe/samoe.hpp"

using namespace wmoe;

namespace {

Tensor rnd_tensor(const Shape& s, std::uint64_t seed, double bound = 0.5,
                  bool requires_grad = true) {
  Rng rng(seed);
  long n = 1;
  for (int e : s) n *= e;
  std::vector<double> d(n);
  for (auto& v : d) v = rng.uniform(-bound, bound);
  return Tensor::from(std::move(d), s, requires_grad);
}

samoe::MoeParams make_params(int c, int n_layers, int n_experts, int k, std::uint64_t seed) {
  samoe::MoeParams p;
  const int c_out = c / n_layers;
  for (int l = 0; l < n_layers; ++l) {
    p.adapters.emplace_back(rnd_tensor({c_out, c}, mix_seed(seed, 100 + l)),
                            rnd_tensor({c_out}, mix_seed(seed, 200 + l)));
  }
  p.gate_w = rnd_tensor({n_experts, c}, mix_seed(seed, 1));
  p.gate_b = rnd_tensor({n_experts}, mix_seed(seed, 2));
  for (int n = 0; n < n_experts; ++n) {
    samoe::Expert e;
    e.w1 = rnd_tensor({c, c}, mix_seed(seed, 300 + n));
    e.b1 = rnd_tensor({c}, mix_seed(seed, 400 + n));
    e.w2 = rnd_tensor({c, c}, mix_seed(seed, 500 + n));
    e.b2 = rnd_tensor({c}, mix_seed(seed, 600 + n));
    p.experts.push_back(e);
  }
  p.top_k = k;
  return p;
}

}  // namespace

TEST_SUITE("samoe") {

TEST_CASE("adapter_pool: constant grids concatenate per-layer projections") {
  const int c = 8, L = 2;
  auto params = make_params(c, L, 2, 1, 7);
  std::vector<Tensor> grids = {Tensor::full({3, 3, c}, 0.25), Tensor::full({3, 3, c}, -0.5)};
  Tensor x_a = samoe::adapter_pool(params, grids);
  CHECK(x_a.shape() == Shape{c});
  // GAP of a constant grid equals the projection of one pixel
  for (int l = 0; l < L; ++l) {
    Tensor one_pixel = reshape(grids[l], {9, c});
    Tensor proj = linear(one_pixel, params.adapters[l].first, params.adapters[l].second);
    for (int i = 0; i < c / L; ++i) {
      CHECK(x_a.data()[l * (c / L) + i] == doctest::Approx(proj.data()[i]).epsilon(1e-13));
    }
  }
}

TEST_CASE("adapter_pool: L=1 identity adapter reduces to gap") {
  const int c = 4;
  samoe::MoeParams params;
  std::vector<double> eye(c * c, 0.0);
  for (int i = 0; i < c; ++i) eye[i * c + i] = 1.0;
  params.adapters.emplace_back(Tensor::from(eye, {c, c}, true), Tensor::zeros({c}, true));
  Tensor grid = rnd_tensor({2, 2, c}, 9, 1.0, false);
  Tensor x_a = samoe::adapter_pool(params, {grid});
  Tensor g = gap(grid);
  for (int i = 0; i < c; ++i) CHECK(x_a.data()[i] == doctest::Approx(g.data()[i]).epsilon(1e-14));
}

TEST_CASE("adapter_pool: zero grids and zero biases give zero") {
  const int c = 8, L = 2;
  auto params = make_params(c, L, 2, 1, 11);
  for (auto& [w, b] : params.adapters) {
    std::fill(b.data().begin(), b.data().end(), 0.0);
  }
  std::vector<Tensor> grids = {Tensor::zeros({2, 2, c}), Tensor::zeros({2, 2, c})};
  for (double v : samoe::adapter_pool(params, grids).data()) CHECK(v == 0.0);
}

TEST_CASE("route: hand example, ties, and k=N") {
  const int c = 4, n = 4;
  samoe::MoeParams params;
  // gate computes scores equal to a chosen vector via zero weight + bias
  params.gate_w = Tensor::zeros({n, c}, true);
  params.gate_b = Tensor::from({3, 1, 2, 0}, {n}, true);
  params.top_k = 2;
  Tensor x_a = Tensor::zeros({c});

  auto routing = samoe::route(params, x_a);
  CHECK(routing.selected == std::vector<int>{0, 2});
  const double e = std::exp(1.0);
  CHECK(routing.weights.data()[0] == doctest::Approx(e / (e + 1)).epsilon(1e-12));
  CHECK(routing.weights.data()[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-12));
  double wsum = routing.weights.data()[0] + routing.weights.data()[1];
  CHECK(std::abs(wsum - 1.0) <= 1e-12);

  // all-equal scores: tie-break selects the lowest indices, weights are even
  params.gate_b = Tensor::full({n}, 0.7, true);
  auto tied = samoe::route(params, x_a);
  CHECK(tied.selected == std::vector<int>{0, 1});
  CHECK(tied.weights.data()[0] == 0.5);
  CHECK(tied.weights.data()[1] == 0.5);

  // k = N equals the dense softmax over all scores
  params.gate_b = Tensor::from({0.3, -1.2, 0.9, 0.1}, {n}, true);
  params.top_k = n;
  auto dense = samoe::route(params, x_a);
  Tensor full = softmax(params.gate_b, 0);
  for (int i = 0; i < n; ++i) {
    CHECK(std::abs(dense.weights.data()[i] - full.data()[dense.selected[i]]) <= 1e-12);
  }
}

TEST_CASE("route: constant shift of gate scores changes nothing") {
  const int c = 6, n = 8, k = 3;
  auto params = make_params(c, 2, n, k, 13);
  Tensor x_a = rnd_tensor({c}, 14, 1.0, false);
  auto base = samoe::route(params, x_a);

  auto shifted_params = params;
  shifted_params.gate_b = add_scalar(params.gate_b, 5.25);
  auto shifted = samoe::route(shifted_params, x_a);
  CHECK(shifted.selected == base.selected);
  for (int i = 0; i < k; ++i) {
    CHECK(std::abs(shifted.weights.data()[i] - base.weights.data()[i]) <= 1e-12);
  }
}

TEST_CASE("moe_aggregate: k=1 returns the top expert output exactly") {
  const int c = 6;
  auto params = make_params(c, 2, 4, 1, 15);
  Tensor x_a = rnd_tensor({c}, 16, 1.0, false);
  auto routing = samoe::route(params, x_a);
  REQUIRE(routing.selected.size() == 1);
  Tensor x_p = samoe::moe_aggregate(params, routing, x_a);

  const auto& e = params.experts[routing.selected[0]];
  Tensor direct =
      reshape(linear(relu(linear(reshape(x_a, {1, c}), e.w1, e.b1)), e.w2, e.b2), {c});
  for (int i = 0; i < c; ++i) {
    CHECK(x_p.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-13));
  }
}

TEST_CASE("moe_aggregate: identical experts make routing irrelevant") {
  const int c = 4;
  auto params = make_params(c, 2, 3, 2, 17);
  for (auto& e : params.experts) e = params.experts[0];
  Tensor x_a = rnd_tensor({c}, 18, 1.0, false);
  auto routing = samoe::route(params, x_a);
  Tensor x_p = samoe::moe_aggregate(params, routing, x_a);
  const auto& e = params.experts[0];
  Tensor direct =
      reshape(linear(relu(linear(reshape(x_a, {1, c}), e.w1, e.b1)), e.w2, e.b2), {c});
  for (int i = 0; i < c; ++i) {
    CHECK(x_p.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("joint permutation of experts and gate rows leaves x_p unchanged") {
  const int c = 6, n = 5, k = 2;
  Rng trial_rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    auto params = make_params(c, 2, n, k, mix_seed(20, trial));
    Tensor x_a = rnd_tensor({c}, mix_seed(21, trial), 1.0, false);
    auto routing = samoe::route(params, x_a);
    Tensor x_p = samoe::moe_aggregate(params, routing, x_a);

    // random permutation of expert indices
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int i = n; i > 1; --i) std::swap(perm[i - 1], perm[trial_rng.below(i)]);

    samoe::MoeParams permuted = params;
    std::vector<double> gw(params.gate_w.data().size());
    std::vector<double> gb(n);
    for (int dst = 0; dst < n; ++dst) {
      const int src = perm[dst];
      permuted.experts[dst] = params.experts[src];
      for (int j = 0; j < c; ++j) gw[dst * c + j] = params.gate_w.data()[src * c + j];
      gb[dst] = params.gate_b.data()[src];
    }
    permuted.gate_w = Tensor::from(gw, {n, c}, true);
    permuted.gate_b = Tensor::from(gb, {n}, true);

    auto routing_p = samoe::route(permuted, x_a);
    Tensor x_p2 = samoe::moe_aggregate(permuted, routing_p, x_a);
    for (int i = 0; i < c; ++i) CHECK(std::abs(x_p.data()[i] - x_p2.data()[i]) <= 1e-12);
  }
}

TEST_CASE("unselected experts receive no gradient") {
  const int c = 4, n = 3, k = 1;
  auto params = make_params(c, 2, n, k, 23);
  Tensor x_a = rnd_tensor({c}, 24, 1.0, false);
  auto routing = samoe::route(params, x_a);
  for (auto& e : params.experts) {
    e.w1.zero_grad();
    e.b1.zero_grad();
    e.w2.zero_grad();
    e.b2.zero_grad();
  }
  backward(sum(square(samoe::moe_aggregate(params, routing, x_a))));
  for (int i = 0; i < n; ++i) {
    double total = 0;
    for (double g : params.experts[i].w1.grad()) total += std::abs(g);
    if (i == routing.selected[0]) {
      CHECK(total > 0.0);
    } else {
      CHECK(total == 0.0);
    }
  }
}

TEST_CASE("image_score") {
  const int c = 4;
  // equal similarities -> 0.5
  Tensor ft_same = Tensor::from(std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0}, {2, c});
  Tensor x_c = Tensor::from(std::vector<double>{2, 0, 0, 0}, {c});
  Tensor zero = Tensor::zeros({c});
  CHECK(samoe::image_score(zero, x_c, ft_same, 0.07).value() == doctest::Approx(0.5));

  // sims (0, 1) at tau = 1 -> e/(1+e)
  Tensor ft = Tensor::from(std::vector<double>{0, 1, 0, 0, 1, 0, 0, 0}, {2, c});
  const double e = std::exp(1.0);
  CHECK(samoe::image_score(zero, x_c, ft, 1.0).value() ==
        doctest::Approx(e / (1 + e)).epsilon(1e-12));

  // x_p = 0 scores the pure class token: same as adding nothing
  Tensor x_p = Tensor::zeros({c});
  CHECK(samoe::image_score(x_p, x_c, ft, 0.07).value() ==
        samoe::image_score(zero, x_c, ft, 0.07).value());

  // range check
  Rng rng(25);
  for (int t = 0; t < 20; ++t) {
    Tensor rxc = rnd_tensor({c}, mix_seed(26, t), 1.0, false);
    Tensor rft = rnd_tensor({2, c}, mix_seed(27, t), 1.0, false);
    const double s = samoe::image_score(zero, rxc, rft, 0.07).value();
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("final_score") {
  auto fs0 = samoe::final_score(Tensor::scalar(0.0), Tensor::zeros({2, 2}));
  CHECK(fs0.raw.value() == 0.0);
  CHECK(fs0.norm.value() == 0.0);

  auto fs1 = samoe::final_score(Tensor::scalar(1.0), Tensor::full({2, 2}, 1.0));
  CHECK(fs1.raw.value() == 2.0);
  CHECK(fs1.norm.value() == 1.0);

  // ranking by raw equals ranking by norm
  Rng rng(28);
  std::vector<double> raws, norms;
  for (int t = 0; t < 10; ++t) {
    auto fs = samoe::final_score(Tensor::scalar(rng.uniform01()),
                                 Tensor::full({2, 2}, rng.uniform01()));
    raws.push_back(fs.raw.value());
    norms.push_back(fs.norm.value());
  }
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      CHECK((raws[i] < raws[j]) == (norms[i] < norms[j]));
    }
  }
}

TEST_CASE("routing weights: nonnegative, sum to one, exactly k nonzero") {
  Rng trial_rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(trial_rng.below(7));
    const int k = 1 + static_cast<int>(trial_rng.below(n));
    auto params = make_params(8, 2, n, k, mix_seed(30, trial));
    Tensor x_a = rnd_tensor({8}, mix_seed(31, trial), 1.0, false);
    auto routing = samoe::route(params, x_a);
    CHECK(static_cast<int>(routing.selected.size()) == k);
    double sum_w = 0;
    for (double w : routing.weights.data()) {
      CHECK(w >= 0.0);
      sum_w += w;
    }
    CHECK(std::abs(sum_w - 1.0) <= 1e-12);
  }
}

TEST_CASE("moe path gradient fidelity") {
  const int c = 8, L = 2, n = 4, k = 2;
  auto params = make_params(c, L, n, k, 33);
  NamedParamSet set;
  for (int l = 0; l < L; ++l) {
    set.insert("adapter" + std::to_string(l) + ".w", params.adapters[l].first);
    set.insert("adapter" + std::to_string(l) + ".b", params.adapters[l].second);
  }
  set.insert("gate.w", params.gate_w);
  set.insert("gate.b", params.gate_b);
  for (int i = 0; i < n; ++i) {
    set.insert("expert" + std::to_string(i) + ".w1", params.experts[i].w1);
    set.insert("expert" + std::to_string(i) + ".b1", params.experts[i].b1);
    set.insert("expert" + std::to_string(i) + ".w2", params.experts[i].w2);
    set.insert("expert" + std::to_string(i) + ".b2", params.experts[i].b2);
  }
  std::vector<Tensor> grids = {rnd_tensor({3, 3, c}, 34, 1.0, false),
                               rnd_tensor({3, 3, c}, 35, 1.0, false)};
  auto f = [&](NamedParamSet&) {
    Tensor x_a = samoe::adapter_pool(params, grids);
    auto routing = samoe::route(params, x_a);
    Tensor x_p = samoe::moe_aggregate(params, routing, x_a);
    return sum(square(x_p));
  };
  CHECK(grad_check(f, set, 1e-5, 10, 36) <= 1e-5);
}

}  // TEST_SUITE
