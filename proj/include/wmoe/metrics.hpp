// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "wmoe/train.hpp"

namespace wmoe::metrics {

// A metric is absent (not zero) when its input is single-class.
struct MetricsReport {
  std::optional<double> image_auroc, image_f1max, image_ap;
  std::optional<double> pixel_auroc, pixel_ap, pixel_pro;
  int n_images = 0, n_image_pos = 0, n_image_neg = 0;
  long n_pixels = 0, n_pixel_pos = 0, n_pixel_neg = 0;
  long pixels_evaluated = 0;  // after optional subsampling
};

// Mann-Whitney AUROC with half credit for ties.
std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Descending-score sweep with ties grouped at one threshold.
std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& labels);

// Max F1 over thresholds at every distinct score (predict positive at >=).
std::optional<double> f1_max(const std::vector<double>& scores, const std::vector<int>& labels);

// Per-region overlap integrated over FPR in [0, fpr_limit], trapezoid rule,
// normalized by fpr_limit. Regions are 8-connected components of each mask;
// the threshold sweep uses every distinct map value, capped at
// max_thresholds quantile steps.
struct PixelMap {
  std::vector<double> values;  // row-major h x w
  int h = 0, w = 0;
};
std::optional<double> pro(const std::vector<PixelMap>& maps, const std::vector<PixelMap>& masks,
                          double fpr_limit = 0.3, int max_thresholds = 256);

// Runs the model over the eval set (eval mode, deterministic) and computes the
// full report. Pixel scores come from the fused anomaly map at image
// resolution; if the pixel count exceeds max_pixels, AUROC/AP inputs are
// subsampled uniformly with subsample_seed (PRO always sees full maps).
MetricsReport evaluate(const Model& model, const std::vector<PreparedSample>& eval_data,
                       std::uint64_t subsample_seed = 0, long max_pixels = 1000000);

// Image scores (s_hat_raw) and fused maps for the whole set, eval mode.
struct InferenceOutput {
  std::vector<double> image_scores;
  std::vector<PixelMap> fused_maps;
};
InferenceOutput run_inference(const Model& model, const std::vector<PreparedSample>& eval_data);

}  // namespace wmoe::metrics
