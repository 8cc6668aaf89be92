// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "wmoe/errors.hpp"

namespace wmoe::synth {

struct ImageSample {
  std::string id;
  std::string family;
  int label = 0;  // 1 iff mask has at least one positive pixel
  int h = 0, w = 0;
  std::vector<double> pixels;  // grayscale in [0,1], row-major
  std::vector<double> mask;    // {0,1}, same size; all-zero for normal samples
  std::uint64_t seed = 0;

  void validate() const;
};

enum class TextureKind { sinusoid_grating, checkerboard, filtered_noise };
enum class DefectKind { blob, scratch, patch_swap };

struct FamilySpec {
  std::string name;
  TextureKind texture = TextureKind::sinusoid_grating;
  double period = 8.0;         // texture period in pixels
  double angle = 0.4;          // texture orientation, radians
  double smooth_radius = 2.0;  // filtered-noise box radius
  std::vector<DefectKind> defects = {DefectKind::blob, DefectKind::scratch,
                                     DefectKind::patch_swap};
  double intensity_lo = 0.25, intensity_hi = 0.55;
  double anomaly_rate = 0.5;
  int image_h = 64, image_w = 64;

  void validate() const;
};

// Deterministic in (spec, n, seed). Normal samples are pure texture plus 2%
// amplitude noise; anomalous samples add exactly one defect whose support is
// the mask. Defect area stays within [0.2%, 10%] of the image.
std::vector<ImageSample> generate(const FamilySpec& spec, int n, std::uint64_t seed);

// Zero-shot discipline: train and eval family sets must be disjoint.
std::pair<std::vector<ImageSample>, std::vector<ImageSample>> zero_shot_split(
    const std::vector<ImageSample>& all, const std::set<std::string>& train_families,
    const std::set<std::string>& eval_families);

// Dataset layout: <dir>/index.csv (id,family,label,pixels_path,mask_path),
// pixels as 16-bit PGM under images/, masks as 8-bit PGM (0 or 255) under
// masks/; normal samples have an empty mask_path.
void write_dataset(const std::vector<ImageSample>& samples, const std::string& dir);
std::vector<ImageSample> read_dataset(const std::string& dir);

// Portable graymap helpers (P5). 16-bit samples are most-significant-byte
// first, per the format.
void write_pgm16(const std::string& path, const std::vector<double>& pixels, int h, int w);
std::vector<double> read_pgm16(const std::string& path, int& h, int& w);
void write_pgm8(const std::string& path, const std::vector<double>& values01, int h, int w);
std::vector<double> read_pgm8(const std::string& path, int& h, int& w);

// Raw 8-bit graymap with arbitrary byte values (heatmap export).
void write_pgm8_gray(const std::string& path, const std::vector<unsigned char>& bytes, int h,
                     int w);
std::vector<unsigned char> read_pgm8_gray(const std::string& path, int& h, int& w);

const char* texture_name(TextureKind k);
const char* defect_name(DefectKind k);
TextureKind texture_from_name(const std::string& s);
DefectKind defect_from_name(const std::string& s);

}  // namespace wmoe::synth
