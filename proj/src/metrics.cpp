// SPDX-License-Identifier: Apache-2.0
#include "wmoe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "wmoe/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wmoe::metrics {

namespace {

struct ClassCounts {
  long pos = 0, neg = 0;
};

ClassCounts count_classes(const std::vector<int>& labels) {
  ClassCounts c;
  for (int l : labels) (l ? c.pos : c.neg)++;
  return c;
}

void check_sizes(const std::vector<double>& scores, const std::vector<int>& labels,
                 const char* who) {
  if (scores.size() != labels.size()) {
    throw contract_error(std::string(who) + ": scores and labels differ in length");
  }
}

}  // namespace

std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_sizes(scores, labels, "auroc");
  const ClassCounts c = count_classes(labels);
  if (c.pos == 0 || c.neg == 0) return std::nullopt;

  // midrank Mann-Whitney: rank-sum of positives with half credit for ties
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&scores](int a, int b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t t = i; t < j; ++t) {
      if (labels[idx[t]]) rank_sum_pos += midrank;
    }
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(c.pos) * (c.pos + 1);
  return u / (static_cast<double>(c.pos) * static_cast<double>(c.neg));
}

namespace {

// Sweep state shared by AP and F1-max: descending distinct-score groups.
template <class Fn>
void sweep_groups(const std::vector<double>& scores, const std::vector<int>& labels, Fn fn) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&scores](int a, int b) { return scores[a] > scores[b]; });
  long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[idx[t]]) ++tp;
      else ++fp;
    }
    fn(tp, fp);  // cumulative counts at threshold = this group's score
    i = j;
  }
}

}  // namespace

std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& labels) {
  check_sizes(scores, labels, "average_precision");
  const ClassCounts c = count_classes(labels);
  if (c.pos == 0) return std::nullopt;
  double ap = 0.0;
  double prev_recall = 0.0;
  sweep_groups(scores, labels, [&](long tp, long fp) {
    const double recall = static_cast<double>(tp) / c.pos;
    const double precision = static_cast<double>(tp) / (tp + fp);
    if (recall > prev_recall) {
      ap += (recall - prev_recall) * precision;
      prev_recall = recall;
    }
  });
  return ap;
}

std::optional<double> f1_max(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_sizes(scores, labels, "f1_max");
  const ClassCounts c = count_classes(labels);
  if (c.pos == 0) return std::nullopt;
  double best = 0.0;
  sweep_groups(scores, labels, [&](long tp, long fp) {
    const long fn = c.pos - tp;
    const double f1 = (2.0 * tp) / static_cast<double>(2 * tp + fp + fn);
    best = std::max(best, f1);
  });
  return best;
}

// --- PRO ------------------------------------------------------------------------

namespace {

// 8-connected components; returns per-pixel region ids (-1 for background)
// and appends the new regions' sizes.
std::vector<int> label_regions(const PixelMap& mask, int first_region,
                               std::vector<long>& region_sizes) {
  const int h = mask.h, w = mask.w;
  std::vector<int> ids(static_cast<std::size_t>(h) * w, -1);
  int next = first_region;
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const long i = static_cast<long>(y) * w + x;
      if (mask.values[i] == 0.0 || ids[i] != -1) continue;
      ids[i] = next;
      long size = 0;
      queue.emplace_back(y, x);
      while (!queue.empty()) {
        auto [cy, cx] = queue.front();
        queue.pop_front();
        ++size;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            const long ni = static_cast<long>(ny) * w + nx;
            if (mask.values[ni] != 0.0 && ids[ni] == -1) {
              ids[ni] = next;
              queue.emplace_back(ny, nx);
            }
          }
        }
      }
      region_sizes.push_back(size);
      ++next;
    }
  }
  return ids;
}

}  // namespace

std::optional<double> pro(const std::vector<PixelMap>& maps, const std::vector<PixelMap>& masks,
                          double fpr_limit, int max_thresholds) {
  if (maps.size() != masks.size()) throw contract_error("pro: maps/masks count mismatch");
  if (fpr_limit <= 0.0 || fpr_limit > 1.0) throw contract_error("pro: fpr_limit out of (0,1]");

  // Flatten all pixels into (value, region_id or -1).
  struct Pixel {
    double value;
    int region;  // -1 = true negative
  };
  std::vector<Pixel> pixels;
  std::vector<long> region_sizes;
  long n_neg = 0;
  for (std::size_t im = 0; im < maps.size(); ++im) {
    const PixelMap& map = maps[im];
    const PixelMap& mask = masks[im];
    if (map.h != mask.h || map.w != mask.w) {
      throw dim_error("pro: map and mask sizes differ for image " + std::to_string(im));
    }
    const std::vector<int> ids =
        label_regions(mask, static_cast<int>(region_sizes.size()), region_sizes);
    for (long i = 0; i < static_cast<long>(map.values.size()); ++i) {
      pixels.push_back({map.values[i], ids[i]});
      if (ids[i] == -1) ++n_neg;
    }
  }
  if (region_sizes.empty()) return std::nullopt;  // no anomalous pixels anywhere
  if (n_neg == 0) return std::nullopt;            // FPR undefined

  // Thresholds: all distinct map values, descending, capped at quantile steps.
  std::vector<double> values;
  values.reserve(pixels.size());
  for (const auto& p : pixels) values.push_back(p.value);
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> thresholds;
  if (static_cast<int>(values.size()) <= max_thresholds) {
    thresholds.assign(values.rbegin(), values.rend());
  } else {
    for (int i = 0; i < max_thresholds; ++i) {
      const std::size_t pos = static_cast<std::size_t>(
          std::llround(static_cast<double>(i) * (values.size() - 1) / (max_thresholds - 1)));
      thresholds.push_back(values[pos]);
    }
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    std::reverse(thresholds.begin(), thresholds.end());
  }

  // One descending sweep over pixels, emitting (fpr, pro) at each threshold.
  std::sort(pixels.begin(), pixels.end(),
            [](const Pixel& a, const Pixel& b) { return a.value > b.value; });
  std::vector<long> region_hits(region_sizes.size(), 0);
  long fp = 0;
  std::size_t cursor = 0;
  std::vector<std::pair<double, double>> curve;  // (fpr, mean region overlap)
  for (double t : thresholds) {
    while (cursor < pixels.size() && pixels[cursor].value >= t) {
      if (pixels[cursor].region >= 0) ++region_hits[pixels[cursor].region];
      else ++fp;
      ++cursor;
    }
    double overlap = 0.0;
    for (std::size_t r = 0; r < region_sizes.size(); ++r) {
      overlap += static_cast<double>(region_hits[r]) / region_sizes[r];
    }
    overlap /= region_sizes.size();
    curve.emplace_back(static_cast<double>(fp) / n_neg, overlap);
  }

  // Trapezoid over FPR in [0, fpr_limit], interpolating at the limit. Left of
  // the first operating point the curve extends flat, so a single effective
  // threshold scores its region-coverage fraction.
  double area = curve.front().second * std::min(curve.front().first, fpr_limit);
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto [f0, p0] = curve[i - 1];
    const auto [f1, p1] = curve[i];
    if (f0 >= fpr_limit) break;
    if (f1 <= fpr_limit) {
      area += (f1 - f0) * 0.5 * (p0 + p1);
    } else {
      const double p_lim = f1 > f0 ? p0 + (p1 - p0) * (fpr_limit - f0) / (f1 - f0) : p1;
      area += (fpr_limit - f0) * 0.5 * (p0 + p_lim);
      break;
    }
  }
  return area / fpr_limit;
}

// --- evaluate ---------------------------------------------------------------------

InferenceOutput run_inference(const Model& model, const std::vector<PreparedSample>& eval_data) {
  InferenceOutput out;
  out.image_scores.resize(eval_data.size());
  out.fused_maps.resize(eval_data.size());
  const int nt = kernels::max_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(dynamic) if (nt > 1)
#endif
  for (long i = 0; i < static_cast<long>(eval_data.size()); ++i) {
    NoGradGuard no_grad;
    Rng rng(0);  // eval mode draws nothing
    Model::Forward fwd = model.forward(eval_data[i].bundle, Mode::eval, rng);
    out.image_scores[i] = fwd.s_hat_raw.value();
    PixelMap pm;
    pm.h = fwd.maps.fused.shape()[0];
    pm.w = fwd.maps.fused.shape()[1];
    pm.values = fwd.maps.fused.data();
    out.fused_maps[i] = std::move(pm);
  }
  return out;
}

MetricsReport evaluate(const Model& model, const std::vector<PreparedSample>& eval_data,
                       std::uint64_t subsample_seed, long max_pixels) {
  if (eval_data.empty()) throw config_error("evaluate: eval dataset is empty");
  const InferenceOutput inf = run_inference(model, eval_data);

  MetricsReport rep;
  rep.n_images = static_cast<int>(eval_data.size());
  std::vector<int> image_labels;
  for (const auto& s : eval_data) {
    image_labels.push_back(s.image.label);
    (s.image.label ? rep.n_image_pos : rep.n_image_neg)++;
  }
  rep.image_auroc = auroc(inf.image_scores, image_labels);
  rep.image_f1max = f1_max(inf.image_scores, image_labels);
  rep.image_ap = average_precision(inf.image_scores, image_labels);

  // pixel-level over the concatenation of all eval images
  std::vector<double> pixel_scores;
  std::vector<int> pixel_labels;
  std::vector<PixelMap> gt_masks;
  for (std::size_t i = 0; i < eval_data.size(); ++i) {
    const auto& img = eval_data[i].image;
    PixelMap gt;
    gt.h = img.h;
    gt.w = img.w;
    gt.values = img.mask;
    gt_masks.push_back(std::move(gt));
    const auto& map = inf.fused_maps[i];
    for (long p = 0; p < static_cast<long>(map.values.size()); ++p) {
      pixel_scores.push_back(map.values[p]);
      pixel_labels.push_back(img.mask[p] != 0.0 ? 1 : 0);
    }
  }
  rep.n_pixels = static_cast<long>(pixel_scores.size());
  for (int l : pixel_labels) (l ? rep.n_pixel_pos : rep.n_pixel_neg)++;

  if (rep.n_pixels > max_pixels) {
    // seeded uniform subsample without replacement
    std::vector<long> idx(rep.n_pixels);
    std::iota(idx.begin(), idx.end(), 0L);
    Rng rng(mix_seed(subsample_seed, fnv1a("pixel-subsample")));
    for (long i = 0; i < max_pixels; ++i) {
      const long j = i + static_cast<long>(rng.below(static_cast<std::uint64_t>(rep.n_pixels - i)));
      std::swap(idx[i], idx[j]);
    }
    std::vector<double> ss;
    std::vector<int> sl;
    ss.reserve(max_pixels);
    sl.reserve(max_pixels);
    for (long i = 0; i < max_pixels; ++i) {
      ss.push_back(pixel_scores[idx[i]]);
      sl.push_back(pixel_labels[idx[i]]);
    }
    pixel_scores = std::move(ss);
    pixel_labels = std::move(sl);
  }
  rep.pixels_evaluated = static_cast<long>(pixel_scores.size());

  rep.pixel_auroc = auroc(pixel_scores, pixel_labels);
  rep.pixel_ap = average_precision(pixel_scores, pixel_labels);
  rep.pixel_pro = pro(inf.fused_maps, gt_masks);
  return rep;
}

}  // namespace wmoe::metrics
