// SPDX-License-Identifier: Apache-2.0
#include "wmoe/samoe.hpp"

#include <algorithm>
#include <numeric>

namespace wmoe::samoe {

Tensor adapter_pool(const MoeParams& params, const std::vector<Tensor>& layer_grids) {
  if (layer_grids.empty()) throw contract_error("adapter_pool: no layer grids");
  if (params.adapters.size() != layer_grids.size()) {
    throw config_error("adapter_pool: " + std::to_string(params.adapters.size()) +
                       " adapters for " + std::to_string(layer_grids.size()) + " layers");
  }
  std::vector<Tensor> projected;
  for (std::size_t l = 0; l < layer_grids.size(); ++l) {
    const Tensor& grid = layer_grids[l];
    if (grid.rank() != 3) throw dim_error("adapter_pool: layer grid must be [H,W,C]");
    const int hw = grid.shape()[0] * grid.shape()[1];
    const int c = grid.shape()[2];
    projected.push_back(
        linear(reshape(grid, {hw, c}), params.adapters[l].first, params.adapters[l].second));
  }
  return mean_rows(concat_cols(projected));
}

RouterOutput route(const MoeParams& params, const Tensor& x_a) {
  const int n = params.gate_w.shape()[0];
  const int k = params.top_k;
  if (k < 1 || k > n) {
    throw contract_error("route: top_k " + std::to_string(k) + " out of range for " +
                         std::to_string(n) + " experts");
  }
  RouterOutput out;
  out.scores =
      reshape(linear(reshape(x_a, {1, x_a.shape()[0]}), params.gate_w, params.gate_b), {n});

  // k largest scores; ties broken by lower expert index
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const auto& s = out.scores.data();
  std::stable_sort(idx.begin(), idx.end(), [&s](int a, int b) { return s[a] > s[b]; });
  out.selected.assign(idx.begin(), idx.begin() + k);
  std::sort(out.selected.begin(), out.selected.end());

  out.weights = softmax(gather(out.scores, out.selected), 0);
  return out;
}

Tensor moe_aggregate(const MoeParams& params, const RouterOutput& routing, const Tensor& x_a) {
  const int c = x_a.shape()[0];
  Tensor x_row = reshape(x_a, {1, c});
  Tensor acc;
  for (std::size_t i = 0; i < routing.selected.size(); ++i) {
    const Expert& e = params.experts.at(routing.selected[i]);
    Tensor y = reshape(linear(relu(linear(x_row, e.w1, e.b1)), e.w2, e.b2), {c});
    Tensor term = scale_by(y, gather(routing.weights, {static_cast<int>(i)}));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

Tensor image_score(const Tensor& x_p, const Tensor& x_c, const Tensor& f_t, double tau) {
  if (tau <= 0.0) throw contract_error("image_score: tau must be positive");
  if (x_p.shape() != x_c.shape()) {
    throw dim_error("image_score: x_p " + shape_str(x_p.shape()) + " vs x_c " +
                    shape_str(x_c.shape()));
  }
  if (!f_t.defined() || f_t.rank() != 2 || f_t.shape()[0] != 2 ||
      f_t.shape()[1] != x_c.shape()[0]) {
    throw dim_error("image_score: text embeddings must be [2, C]");
  }
  const int c = x_c.shape()[0];
  Tensor x_cls = l2_normalize_rows(reshape(add(x_p, x_c), {1, c}));
  Tensor text = l2_normalize_rows(f_t);
  Tensor sims = matmul_nt(x_cls, text);  // [1, 2]
  Tensor probs = softmax(mul_scalar(sims, 1.0 / tau), 1);
  return reshape(select_col(probs, 1), {1});
}

FinalScore final_score(const Tensor& s_txt, const Tensor& fused_map) {
  FinalScore out;
  out.raw = add(s_txt, max_all(fused_map));
  out.norm = mul_scalar(out.raw, 0.5);
  return out;
}

}  // namespace wmoe::samoe
