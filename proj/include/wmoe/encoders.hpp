// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wmoe/tensor.hpp"

namespace wmoe {

// Desk-scale stand-in for the pretrained vision-language backbone. All weights
// are drawn once from the seed and never updated.
struct EncoderSpec {
  std::uint64_t seed = 1;
  int C = 64;
  int grid_h = 8, grid_w = 8;
  int n_tap_layers = 4;
  int image_h = 64, image_w = 64;

  void validate() const;
};

struct FeatureBundle {
  Tensor x_c;                                  // [C], frozen
  std::vector<std::pair<int, Tensor>> layers;  // (layer_id, [H,W,C]), ids increasing
  enum class Source { stub, file } source = Source::stub;

  void validate() const;
};

// Prompt token matrix plus a mask marking the learnable slot positions.
struct TokenSequence {
  Tensor tokens;                // [n_tok, C]; may carry grad through slot rows
  std::vector<bool> slot_mask;  // true at learnable-slot positions
};

class FrozenEncoder {
 public:
  explicit FrozenEncoder(const EncoderSpec& spec);

  // pixels: [h,w] or [h,w,1], values in [0,1]. Deterministic in (seed, pixels).
  FeatureBundle encode_image(const Tensor& pixels) const;

  // Differentiable with respect to the token rows; output has unit L2 norm.
  Tensor encode_text(const TokenSequence& seq) const;

  // Frozen embedding for a template word, keyed by the word string.
  Tensor word_embedding(const std::string& word) const;

  const EncoderSpec& spec() const { return spec_; }

  // Flat copy of every weight, for frozen-invariance checks.
  std::vector<double> weight_snapshot() const;

 private:
  EncoderSpec spec_;
  std::vector<double> w_embed_, b_embed_;  // [C, patch_len], [C]
  std::vector<std::vector<double>> w_block_, b_block_;
  std::vector<double> w_xc_, b_xc_;
  Tensor txt_w1_, txt_b1_, txt_w2_, txt_b2_;  // frozen constants on the tape
};

// Feature-dump binary format, little-endian:
//   magic "WMOEFEAT", version u32=1, C u32, H u32, W u32, L u32,
//   x_c as C float32, then L records of (layer_id u32, H*W*C float32 row-major).
void save_features(const FeatureBundle& bundle, const std::string& path);
FeatureBundle load_features(const std::string& path);

}  // namespace wmoe
