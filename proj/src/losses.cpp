// SPDX-License-Identifier: Apache-2.0
#include "wmoe/losses.hpp"

#include <cmath>

namespace wmoe {

namespace {
constexpr double kProbClamp = 1e-7;
}

Tensor bce(double s_gt, const Tensor& p) {
  if (s_gt != 0.0 && s_gt != 1.0) throw contract_error("bce: label must be 0 or 1");
  if (p.size() != 1) throw dim_error("bce: prediction must be scalar");
  Tensor pc = clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (s_gt == 1.0) return neg(log_op(pc));
  return neg(log_op(sub(Tensor::scalar(1.0), pc)));
}

Tensor focal(const Tensor& map, const Tensor& gt, double gamma, double alpha) {
  if (map.shape() != gt.shape()) {
    throw dim_error("focal: map " + shape_str(map.shape()) + " vs mask " +
                    shape_str(gt.shape()));
  }
  const long n = map.size();
  std::vector<double> alpha_t(n);
  for (long i = 0; i < n; ++i) {
    const double g = gt.data()[i];
    if (g != 0.0 && g != 1.0) throw contract_error("focal: mask entries must be 0 or 1");
    alpha_t[i] = g == 1.0 ? alpha : 1.0 - alpha;
  }
  Tensor ones = Tensor::full(map.shape(), 1.0);
  // p_t = gt * p + (1 - gt) * (1 - p)
  Tensor p_t = add(mul(gt, map), mul(sub(ones, gt), sub(ones, map)));
  p_t = clamp(p_t, kProbClamp, 1.0 - kProbClamp);
  Tensor modulator = pow_scalar(sub(ones, p_t), gamma);
  Tensor per_pixel = mul(Tensor::from(std::move(alpha_t), map.shape()),
                         mul(modulator, neg(log_op(p_t))));
  return mean(per_pixel);
}

Tensor dice(const Tensor& map, const Tensor& gt, double smooth) {
  if (map.shape() != gt.shape()) {
    throw dim_error("dice: map " + shape_str(map.shape()) + " vs mask " + shape_str(gt.shape()));
  }
  Tensor inter = sum(mul(map, gt));
  Tensor num = add_scalar(mul_scalar(inter, 2.0), smooth);
  Tensor den = add_scalar(add(sum(map), sum(gt)), smooth);
  return sub(Tensor::scalar(1.0), div(num, den));
}

std::vector<double> downsample_mask_any(const std::vector<double>& mask, int h, int w, int H,
                                        int W) {
  if (h % H != 0 || w % W != 0) {
    throw dim_error("downsample_mask_any: " + std::to_string(h) + "x" + std::to_string(w) +
                    " not divisible by " + std::to_string(H) + "x" + std::to_string(W));
  }
  const int bh = h / H, bw = w / W;
  std::vector<double> out(static_cast<std::size_t>(H) * W, 0.0);
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      bool any = false;
      for (int y = i * bh; y < (i + 1) * bh && !any; ++y) {
        for (int x = j * bw; x < (j + 1) * bw; ++x) {
          if (mask[static_cast<long>(y) * w + x] != 0.0) {
            any = true;
            break;
          }
        }
      }
      out[static_cast<long>(i) * W + j] = any ? 1.0 : 0.0;
    }
  }
  return out;
}

}  // namespace wmoe
