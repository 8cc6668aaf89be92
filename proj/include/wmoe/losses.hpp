// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "wmoe/tensor.hpp"

namespace wmoe {

struct FocalConfig {
  double gamma = 2.0;
  double alpha = 0.25;
};

struct LossWeights {
  double global = 1.0;
  double focal = 1.0;
  double dice = 1.0;
  double kl = 1.0;
  double rec = 1.0;
  double moe_balance = 0.0;  // optional gate balancing term, off by default
};

// Scalar component values of one loss evaluation; total is their sum.
struct LossReport {
  double global = 0.0;
  double local_focal = 0.0;
  double local_dice = 0.0;
  double kl = 0.0;
  double rec = 0.0;
  double total = 0.0;
};

// Binary cross-entropy on a scalar prediction in (0,1); the prediction is
// clamped to [1e-7, 1 - 1e-7] so the loss stays finite.
Tensor bce(double s_gt, const Tensor& p);

// Pixel-mean focal loss: alpha_t * (1 - p_t)^gamma * -ln(p_t), where p_t is
// the predicted probability of the true class and alpha_t is alpha for
// positives, 1 - alpha for negatives. gt entries must be 0 or 1.
Tensor focal(const Tensor& map, const Tensor& gt, double gamma, double alpha);

// 1 - (2 * sum(map .* gt) + smooth) / (sum(map) + sum(gt) + smooth)
Tensor dice(const Tensor& map, const Tensor& gt, double smooth);

// Nearest any-positive downsample of a {0,1} mask to grid resolution: a grid
// cell is positive when any covered pixel is positive.
std::vector<double> downsample_mask_any(const std::vector<double>& mask, int h, int w, int H,
                                        int W);

}  // namespace wmoe
