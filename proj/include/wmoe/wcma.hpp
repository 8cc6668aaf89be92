// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "wmoe/tensor.hpp"

namespace wmoe::wcma {

// One parameter set shared across tapped layers.
struct WcmaParams {
  Tensor w1, w2;              // [C, C] linear maps, no bias
  Tensor pconv_w, pconv_b;    // pointwise conv [C, C] + [C]
  Tensor wq, wk, wv;          // [C, C] attention projections
};

// Undecimated single-level Haar sub-bands; lo + lh + hl + hh reconstructs the
// input exactly.
struct WaveletBands {
  Tensor lo, lh, hl, hh;  // each [H, W, C]
};

struct AnomalyOutput {
  std::vector<Tensor> per_layer;     // M_l, [H, W] each, values in (0,1)
  Tensor fused;                      // [h, w] mean of upsampled maps
  std::vector<Tensor> refined_text;  // F_T' per layer, [2, C]
};

WaveletBands haar_decompose(const Tensor& f);           // requires H, W >= 2
Tensor high_freq_aggregate(const WaveletBands& bands);  // lh + hl + hh

// W_h = sigmoid(W1 * ReLU(GAP(F_L+F_H)) + W2 * ReLU(pconv(F_L+F_H))), the
// global channel vector broadcast over space; returns F_H .* W_h + F_L.
Tensor frequency_attention(const WcmaParams& params, const Tensor& f_lo, const Tensor& f_hi);

// Text queries against flattened image keys/values, softmax(Q K^T / sqrt(C)) V.
Tensor cross_attend(const WcmaParams& params, const Tensor& f_t, const Tensor& f_p);

// Cosine similarities between normalized patch vectors and the two text rows,
// softmax at temperature tau; returns the abnormal component, [H, W] in (0,1).
Tensor anomaly_map(const Tensor& f_t_refined, const Tensor& f_p, double tau);

// Bilinear upsample (align corners) of each map to (h, w), then the mean.
Tensor fuse_maps(const std::vector<Tensor>& maps, int h, int w);

}  // namespace wmoe::wcma
