// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "wmoe/tensor.hpp"

namespace wmoe::samoe {

struct Expert {
  Tensor w1, b1, w2, b2;  // C -> C, hidden C, ReLU
};

struct MoeParams {
  std::vector<std::pair<Tensor, Tensor>> adapters;  // per layer: [C/L, C] weight + bias
  Tensor gate_w, gate_b;                            // [N, C], [N]
  std::vector<Expert> experts;
  int top_k = 2;
};

struct RouterOutput {
  Tensor scores;              // [N] gate scores s_n
  std::vector<int> selected;  // k indices, largest scores, ties to lower index
  Tensor weights;             // [k] softmax over the selected scores only
};

// Per-layer linear projection to C/L channels, channel concat, spatial mean.
Tensor adapter_pool(const MoeParams& params, const std::vector<Tensor>& layer_grids);

RouterOutput route(const MoeParams& params, const Tensor& x_a);

// x_p = sum_k w_k * E_k(x_a) over the selected experts only.
Tensor moe_aggregate(const MoeParams& params, const RouterOutput& routing, const Tensor& x_a);

// x_cls = x_p + x_c; cosine similarity against the two text rows, softmax at
// temperature tau, abnormal component. Scalar in (0,1).
Tensor image_score(const Tensor& x_p, const Tensor& x_c, const Tensor& f_t, double tau);

// s_hat_raw = s_txt + max(M) in [0,2]; s_hat_norm = s_hat_raw / 2 feeds the BCE.
struct FinalScore {
  Tensor raw;
  Tensor norm;
};
FinalScore final_score(const Tensor& s_txt, const Tensor& fused_map);

}  // namespace wmoe::samoe
