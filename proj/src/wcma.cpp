// SPDX-License-Identifier: Apache-2.0
#include "wmoe/wcma.hpp"

#include <cmath>

#include "wmoe/kernels.hpp"

namespace wmoe::wcma {

WaveletBands haar_decompose(const Tensor& f) {
  if (!f.defined() || f.rank() != 3) {
    throw dim_error("haar_decompose: expected [H,W,C], got " +
                    (f.defined() ? shape_str(f.shape()) : std::string("undefined")));
  }
  const int H = f.shape()[0], W = f.shape()[1];
  if (H < 2 || W < 2) {
    throw dim_error("haar_decompose: spatial extents must be >= 2, got " + shape_str(f.shape()));
  }
  WaveletBands bands;
  bands.lo = haar_band(f, +1, +1, +1);
  bands.lh = haar_band(f, -1, +1, -1);
  bands.hl = haar_band(f, +1, -1, -1);
  bands.hh = haar_band(f, -1, -1, +1);
  return bands;
}

Tensor high_freq_aggregate(const WaveletBands& bands) {
  return add(add(bands.lh, bands.hl), bands.hh);
}

Tensor frequency_attention(const WcmaParams& params, const Tensor& f_lo, const Tensor& f_hi) {
  if (f_lo.shape() != f_hi.shape()) {
    throw dim_error("frequency_attention: band shape mismatch " + shape_str(f_lo.shape()) +
                    " vs " + shape_str(f_hi.shape()));
  }
  const int H = f_lo.shape()[0], W = f_lo.shape()[1], C = f_lo.shape()[2];
  Tensor combined = add(f_lo, f_hi);

  // global channel term: W1 * ReLU(GAP(.))
  Tensor g = reshape(matmul_nt(reshape(relu(gap(combined)), {1, C}), params.w1), {C});
  // local term per pixel: W2 * ReLU(pconv(.))
  Tensor pc = relu(pointwise_conv(combined, params.pconv_w, params.pconv_b));
  Tensor local = reshape(matmul_nt(reshape(pc, {H * W, C}), params.w2), {H, W, C});

  Tensor w_h = sigmoid(broadcast_add_channels(local, g));
  return add(mul(f_hi, w_h), f_lo);
}

Tensor cross_attend(const WcmaParams& params, const Tensor& f_t, const Tensor& f_p) {
  if (!f_t.defined() || f_t.rank() != 2) throw dim_error("cross_attend: f_t must be [rows, C]");
  if (!f_p.defined() || f_p.rank() != 3) throw dim_error("cross_attend: f_p must be [H,W,C]");
  const int C = f_p.shape()[2];
  if (f_t.shape()[1] != C) {
    throw dim_error("cross_attend: C mismatch " + shape_str(f_t.shape()) + " vs " +
                    shape_str(f_p.shape()));
  }
  Tensor patches = reshape(f_p, {f_p.shape()[0] * f_p.shape()[1], C});
  Tensor q = matmul(f_t, params.wq);
  Tensor k = matmul(patches, params.wk);
  Tensor v = matmul(patches, params.wv);
  Tensor scores = mul_scalar(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(C)));
  return matmul(softmax(scores, 1), v);
}

Tensor anomaly_map(const Tensor& f_t_refined, const Tensor& f_p, double tau) {
  if (tau <= 0.0) throw contract_error("anomaly_map: tau must be positive");
  if (!f_t_refined.defined() || f_t_refined.rank() != 2 || f_t_refined.shape()[0] != 2) {
    throw dim_error("anomaly_map: text embeddings must be [2, C]");
  }
  if (!f_p.defined() || f_p.rank() != 3 || f_p.shape()[2] != f_t_refined.shape()[1]) {
    throw dim_error("anomaly_map: patch grid incompatible with text embeddings");
  }
  const int H = f_p.shape()[0], W = f_p.shape()[1], C = f_p.shape()[2];
  Tensor patches = l2_normalize_rows(reshape(f_p, {H * W, C}));
  Tensor text = l2_normalize_rows(f_t_refined);
  Tensor sims = matmul_nt(patches, text);  // [H*W, 2], col 0 normal / col 1 abnormal
  Tensor probs = softmax(mul_scalar(sims, 1.0 / tau), 1);
  return reshape(select_col(probs, 1), {H, W});
}

Tensor fuse_maps(const std::vector<Tensor>& maps, int h, int w) {
  if (maps.empty()) throw contract_error("fuse_maps: no maps to fuse");
  Tensor acc;
  for (const auto& m : maps) {
    Tensor up = bilinear_upsample(m, h, w);
    acc = acc.defined() ? add(acc, up) : up;
  }
  return mul_scalar(acc, 1.0 / static_cast<double>(maps.size()));
}

}  // namespace wmoe::wcma
